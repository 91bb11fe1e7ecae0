import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from minpath import scenarios
from minpath.image_method import trace_image_path
from minpath.pipeline import (RunConfig, _class_labels, emit_outputs, fmt, run_pipeline,
                              solve_and_validate, to_json)
from minpath.mpt import SolverConfig
from minpath.scene import Facet, build_scene, empty_scene
from minpath.visibility import InteractionList


def two_mirror_run(solver="hybrid", workers=1, ues=None):
    cfg = RunConfig(scenarios.TWO_MIRROR_BS, ues or [scenarios.TWO_MIRROR_UE],
                    max_interactions=2, solver=solver, workers=workers)
    return run_pipeline(scenarios.two_mirror_scene(), cfg)


def rows(text):
    return list(csv.reader(io.StringIO(text)))


# --- formatting -----------------------------------------------------------------

def test_fmt_special_values():
    assert fmt(-0.0) == "0" and fmt(0) == "0"
    assert fmt(math.nan) == "nan"
    assert fmt(math.inf) == "inf" and fmt(-math.inf) == "-inf"
    assert fmt(0.1) == "0.10000000000000001"


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(x):
    assert float(fmt(x)) == x


def test_to_json():
    doc = {"a": [1, 2.5, -0.0], "b": {"c": None, "d": True}, "e": [], "f": "x\"y"}
    assert json.loads(to_json(doc)) == {"a": [1, 2.5, 0], "b": {"c": None, "d": True},
                                        "e": [], "f": "x\"y"}
    with pytest.raises(ValueError):
        to_json([math.inf])
    with pytest.raises(TypeError):
        to_json(object())


# --- configuration ----------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(max_interactions=-1),
    dict(max_interactions=2, max_diffractions=3),
    dict(solver="magic"),
    dict(visibility="exact"),
    dict(workers=0),
    dict(ues=[]),
    dict(ues=[(0, 0, 0)]),
    dict(ues=[(1, 2)]),
])
def test_run_config_rejects(kw):
    args = dict(bs=(0, 0, 0), ues=[(1, 0, 0)])
    args.update(kw)
    with pytest.raises(ValueError):
        RunConfig(**args)


def test_run_config_defaults():
    cfg = RunConfig((0, 0, 0), [(1, 2, 3)], max_interactions=3)
    assert cfg.max_diffractions == 3
    assert cfg.bs == (0.0, 0.0, 0.0) and cfg.ues == [(1.0, 2.0, 3.0)]


def test_class_labels():
    assert _class_labels(2, 2) == ["R", "D", "RR", "RD", "DR", "DD"]
    assert _class_labels(2, 1) == ["R", "D", "RR", "RD", "DR"]
    assert _class_labels(0, 0) == []


# --- runs ---------------------------------------------------------------------------

def test_empty_scene_gives_los_only(tmp_path):
    cfg = RunConfig((0, 0, 0), [(3, 4, 0)], max_interactions=0)
    rep = run_pipeline(empty_scene(), cfg)
    res = rep.results[0]
    assert res.counters.enumerated == 1 and res.counters.valid == 1
    assert res.total.db == pytest.approx(0.0, abs=1e-12)
    emit_outputs(rep, tmp_path)
    doc = json.loads((tmp_path / "paths.json").read_text())
    assert doc["ues"][0]["paths"][0]["candidate"] == []
    assert doc["ues"][0]["paths"][0]["class"] == "LOS"
    assert rows((tmp_path / "classes.csv").read_text())[1][:2] == ["LOS", "1"]


def test_blocked_los_gives_header_only_fields(tmp_path):
    wall = Facet(0, np.array([(1, -5, -5), (1, 5, -5), (1, 5, 5), (1, -5, 5.)]))
    cfg = RunConfig((0, 0, 0), [(2, 0, 0)], max_interactions=0)
    rep = run_pipeline(build_scene([wall]), cfg)
    c = rep.results[0].counters
    # the adjacency graph already drops the blocked BS-UE link
    assert c.enumerated == 0 and c.valid == 0
    emit_outputs(rep, tmp_path)
    assert len(rows((tmp_path / "fields.csv").read_text())) == 1
    assert len(rows((tmp_path / "polylines.csv").read_text())) == 1
    assert rows((tmp_path / "classes.csv").read_text())[1] == ["LOS", "0", "-inf"]


def test_counters_are_consistent():
    for solver in ("hybrid", "mpt-parametric", "mpt-cartesian", "image-method"):
        c = two_mirror_run(solver).results[0].counters
        assert c.enumerated == c.skipped + c.unsolvable + c.solved
        assert c.paths >= c.solved >= 0
        assert c.paths == c.valid + sum(c.rejected.values())


def test_image_method_solver_skips_diffraction():
    roof = Facet(0, np.array([[0, 0, -10], [0, 0, 10], [-10, 0, 10], [-10, 0, -10.]])[::-1])
    wall = Facet(1, np.array([[0, 0, -10], [0, -10, -10], [0, -10, 10], [0, 0, 10.]])[::-1])
    sc = build_scene([roof, wall])
    bs, ue = (-4.0, 3.0, -1.0), (3.0, -6.0, 2.0)
    c = run_pipeline(sc, RunConfig(bs, [ue], 1, solver="image-method")).results[0].counters
    # the corner edge is out of scope for the image method
    assert c.skipped == 1
    c = run_pipeline(sc, RunConfig(bs, [ue], 1, solver="hybrid")).results[0].counters
    assert c.skipped == 0 and c.valid >= 1


def test_hybrid_rr_path_matches_image_method():
    rep = two_mirror_run()
    rr = [p for p in rep.results[0].paths if p.candidate.label == "RR" and p.is_valid]
    assert len(rr) == 1
    p = rr[0]
    want = trace_image_path(scenarios.two_mirror_scene(), scenarios.TWO_MIRROR_BS,
                            scenarios.TWO_MIRROR_UE, p.candidate)
    assert np.allclose(p.points, want.points, atol=1e-12)
    assert np.allclose(p.points[1:3], [(20 / 7, 20 / 7, 0), (5, 10 / 3, 0)], atol=1e-12)


def test_solvers_agree_on_valid_paths():
    def valid(rep):
        return sorted((str(p.candidate), tuple(np.round(p.points, 6).ravel()))
                      for p in rep.results[0].paths if p.is_valid)
    a = valid(two_mirror_run("hybrid"))
    assert a == valid(two_mirror_run("mpt-parametric"))
    assert a == valid(two_mirror_run("mpt-cartesian"))


def test_solve_and_validate_outcomes():
    sc = scenarios.two_mirror_scene()
    cfg = SolverConfig()
    out, ps = solve_and_validate(sc, InteractionList.from_ids(sc, [0, 1]),
                                 scenarios.TWO_MIRROR_BS, scenarios.TWO_MIRROR_UE,
                                 "image-method", cfg)
    assert out == "solved" and ps[0].is_valid
    # reversed order has its image point beyond the first mirror
    out, ps = solve_and_validate(sc, InteractionList.from_ids(sc, [1, 0]),
                                 scenarios.TWO_MIRROR_BS, scenarios.TWO_MIRROR_UE,
                                 "image-method", cfg)
    assert out in ("unsolvable", "solved")
    assert all(not p.is_valid for p in ps)


def test_several_ues_write_one_table_each(tmp_path):
    rep = two_mirror_run(ues=[scenarios.TWO_MIRROR_UE, (3.0, 3.0, 0.0)])
    names = sorted(p.name for p in emit_outputs(rep, tmp_path, write_graph=True))
    assert names == ["adjacency_ue0.csv", "adjacency_ue1.csv", "classes_ue0.csv",
                     "classes_ue1.csv", "fields.csv", "paths.json", "polylines.csv"]
    doc = json.loads((tmp_path / "paths.json").read_text())
    for k, res in enumerate(rep.results):
        assert doc["ues"][k]["counters"]["valid"] == res.counters.valid
        assert len(doc["ues"][k]["paths"]) == res.counters.paths
    f = rows((tmp_path / "fields.csv").read_text())
    assert len(f) - 1 == sum(r.counters.valid for r in rep.results)
    assert {r[0] for r in f[1:]} == {"0", "1"}


def test_outputs_repeat_and_do_not_depend_on_workers(tmp_path):
    texts = []
    for k, workers in enumerate((1, 1, 3)):
        emit_outputs(two_mirror_run(workers=workers), tmp_path / str(k))
        texts.append([(tmp_path / str(k) / n).read_bytes()
                      for n in ("paths.json", "fields.csv", "classes.csv", "polylines.csv")])
    assert texts[0] == texts[1] == texts[2]


def test_urban_class_table_lists_every_label():
    cfg = RunConfig(scenarios.URBAN_BS, [scenarios.URBAN_UE], max_interactions=2)
    rep = run_pipeline(scenarios.urban_scene(), cfg)
    res = rep.results[0]
    assert [r.label for r in res.total.classes] == ["LOS", "R", "D", "RR", "RD", "DR", "DD"]
    table = res.total.table()
    assert table["LOS"] == -math.inf       # buildings block the direct ray
    assert math.isfinite(table["D"]) and math.isfinite(table["DD"])
    for p in res.paths:
        if p.is_valid:
            assert p.candidate.n_t <= 2
