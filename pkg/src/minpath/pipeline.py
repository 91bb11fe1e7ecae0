"""End-to-end run: scene -> visibility -> candidates -> paths -> fields,
plus the delimited output files."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import em
from .image_method import UnsolvableCandidate, trace_image_path
from .mpt import CARTESIAN, PARAMETRIC, SolverConfig, solve_candidate
from .scene import Scene
from .validation import PathStatus, validate_path
from .visibility import Kind, build_adjacency, build_visibility, enumerate_candidates

SOLVERS = ("mpt-parametric", "mpt-cartesian", "image-method", "hybrid")
REJECTIONS = (PathStatus.REJECTED_CONTAINMENT, PathStatus.REJECTED_OBSTRUCTION,
              PathStatus.REJECTED_DEGENERATE)


@dataclass
class RunConfig:
    bs: tuple
    ues: list
    max_interactions: int = 2
    max_diffractions: int | None = None
    solver: str = "hybrid"
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)
    radio: em.RadioConfig = field(default_factory=em.RadioConfig)
    visibility: str = "sampled"
    allow_revisits: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.max_interactions < 0:
            raise ValueError("max_interactions must be >= 0")
        if self.max_diffractions is None:
            self.max_diffractions = self.max_interactions
        if not 0 <= self.max_diffractions <= self.max_interactions:
            raise ValueError("max_diffractions must be in [0, max_interactions]")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {', '.join(SOLVERS)}")
        if self.visibility not in ("sampled", "full"):
            raise ValueError("visibility must be 'sampled' or 'full'")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.ues:
            raise ValueError("need at least one UE")
        self.bs = tuple(float(v) for v in self.bs)
        self.ues = [tuple(float(v) for v in ue) for ue in self.ues]
        for ue in self.ues:
            if len(ue) != 3 or len(self.bs) != 3:
                raise ValueError("points must have three coordinates")
            if np.allclose(ue, self.bs, rtol=0, atol=1e-12):
                raise ValueError("BS and UE coincide")


@dataclass
class Counters:
    enumerated: int = 0
    skipped: int = 0          # over the diffraction budget or unsupported by the solver
    unsolvable: int = 0
    solved: int = 0           # candidates with at least one solution
    paths: int = 0
    valid: int = 0
    rejected: dict = field(default_factory=lambda: {s.value: 0 for s in REJECTIONS})


@dataclass
class UEResult:
    ue: tuple
    graph: object
    candidates: list
    paths: list               # every solved path, validated
    contributions: list       # field of each valid path
    total: em.TotalField
    counters: Counters


@dataclass
class RunReport:
    config: RunConfig
    visibility: np.ndarray
    results: list
    timings: dict


# --- solving ------------------------------------------------------------------

def _uses_image_method(solver, scene, candidate):
    if solver == "image-method":
        return True
    if solver != "hybrid":
        return False
    return all(k is Kind.REFLECTION and scene.element(i).is_planar for i, k in candidate)


def solve_and_validate(scene: Scene, candidate, bs, ue, solver: str, cfg: SolverConfig):
    """Solve one candidate with the configured solver and validate every
    solution.  Returns ``(outcome, paths)`` with outcome one of
    ``"solved"``, ``"unsolvable"``, ``"skipped"``."""
    if _uses_image_method(solver, scene, candidate):
        try:
            sol = trace_image_path(scene, bs, ue, candidate)
        except UnsolvableCandidate:
            return "unsolvable", []
        except ValueError:
            return "skipped", []
        # an image point beyond the mirror gives a ray through the plane, not
        # a reflection; the same cost test as for MPT solutions catches it
        if not sol.cost < cfg.cost_threshold:
            return "unsolvable", []
        sols = [sol]
    else:
        mode = CARTESIAN if solver == "mpt-cartesian" else PARAMETRIC
        sols = [p for p, _ in solve_candidate(candidate, scene, bs, ue, cfg, mode)]
        if not sols:
            return "unsolvable", []
    return "solved", [validate_path(scene, p) for p in sols]


_worker_scene = None


def _init_worker(scene):
    global _worker_scene
    _worker_scene = scene


def _task(args):
    return solve_and_validate(_worker_scene, *args)


def _solve_all(scene, tasks, workers):
    if workers == 1 or len(tasks) < 2:
        return [solve_and_validate(scene, *t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(scene,)) as ex:
        # map keeps input order, so the merge is deterministic
        return list(ex.map(_task, tasks, chunksize=chunk))


def _class_labels(max_interactions, max_diffractions):
    labels = []
    for n in range(1, max_interactions + 1):
        for bits in range(2 ** n):
            lab = "".join("D" if bits >> (n - 1 - j) & 1 else "R" for j in range(n))
            if lab.count("D") <= max_diffractions:
                labels.append(lab)
    return labels


def run_pipeline(scene: Scene, cfg: RunConfig, class_labels=None) -> RunReport:
    timings = {}
    t0 = time.perf_counter()
    vis = build_visibility(scene, cfg.visibility)
    timings["visibility"] = time.perf_counter() - t0
    if class_labels is None:
        class_labels = ["LOS"] + _class_labels(cfg.max_interactions, cfg.max_diffractions)
    results = []
    for ue in cfg.ues:
        cnt = Counters()
        t0 = time.perf_counter()
        g = build_adjacency(vis, scene, cfg.bs, ue)
        cands = enumerate_candidates(g, cfg.max_interactions, cfg.allow_revisits)
        timings["enumeration"] = timings.get("enumeration", 0.0) + time.perf_counter() - t0
        cnt.enumerated = len(cands)
        kept = [c for c in cands if c.n_d <= cfg.max_diffractions]
        cnt.skipped = len(cands) - len(kept)
        t0 = time.perf_counter()
        tasks = [(c, cfg.bs, ue, cfg.solver, cfg.solver_cfg) for c in kept]
        outcomes = _solve_all(scene, tasks, cfg.workers)
        timings["solve"] = timings.get("solve", 0.0) + time.perf_counter() - t0
        paths = []
        for outcome, ps in outcomes:
            if outcome == "skipped":
                cnt.skipped += 1
            elif outcome == "unsolvable":
                cnt.unsolvable += 1
            else:
                cnt.solved += 1
                paths.extend(ps)
        cnt.paths = len(paths)
        for p in paths:
            if p.is_valid:
                cnt.valid += 1
            else:
                cnt.rejected[p.status.value] += 1
        t0 = time.perf_counter()
        contribs = [em.propagate_path(scene, p, cfg.radio) for p in paths if p.is_valid]
        e_los = em.free_space_magnitude(cfg.radio, cfg.bs, ue)
        total = em.total_field(contribs, e_los, class_labels)
        timings["fields"] = timings.get("fields", 0.0) + time.perf_counter() - t0
        results.append(UEResult(ue, g, cands, paths, contribs, total, cnt))
    return RunReport(cfg, vis, results, timings)


# --- outputs -----------------------------------------------------------------

def fmt(x) -> str:
    """Float text with 17 significant digits (exact round trip)."""
    x = float(x)
    if x == 0:
        return "0"
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def to_json(obj, indent=0, step=2) -> str:
    """Small JSON writer so floats keep a fixed 17-digit format."""
    pad = " " * (indent + step)
    end = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}{to_json(str(k))}: {to_json(v, indent + step)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent + step) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return {True: "true", False: "false", None: "null"}[obj]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ValueError("JSON cannot hold non-finite numbers")
        return fmt(obj)
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _candidate_json(c):
    return [[eid, k.value] for eid, k in c]


def paths_document(report: RunReport) -> dict:
    ues = []
    for k, res in enumerate(report.results):
        ues.append({
            "ue_index": k,
            "ue": list(res.ue),
            "counters": {
                "enumerated": res.counters.enumerated,
                "skipped": res.counters.skipped,
                "unsolvable": res.counters.unsolvable,
                "solved": res.counters.solved,
                "paths": res.counters.paths,
                "valid": res.counters.valid,
                "rejected": res.counters.rejected,
            },
            "paths": [{
                "candidate": _candidate_json(p.candidate),
                "class": p.candidate.label,
                "status": p.status.value,
                "solver": p.solver,
                "cost": p.cost,
                "points": [list(map(float, q)) for q in p.points],
            } for p in res.paths],
        })
    return {"bs": list(report.config.bs), "ues": ues}


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def fields_csv(report: RunReport) -> str:
    rows = []
    for k, res in enumerate(report.results):
        for j, c in enumerate(res.contributions):
            e = c.e_field
            rows.append([k, j, c.path.candidate.label, str(c.path.candidate),
                         *(fmt(v) for comp in e for v in (comp.real, comp.imag)),
                         fmt(c.magnitude), fmt(c.magnitude_db_rel_los)])
    header = ["ue_index", "path_index", "class", "candidate", "ex_re", "ex_im",
              "ey_re", "ey_im", "ez_re", "ez_im", "magnitude", "db_rel_los"]
    return _csv(rows, header)


def classes_csv(total: em.TotalField) -> str:
    rows = [[row.label, row.n_paths, fmt(row.db)] for row in total.classes]
    return _csv(rows, ["interaction_list", "n_paths", "E_over_ELOS_dB"])


def polylines_csv(report: RunReport) -> str:
    rows = []
    for k, res in enumerate(report.results):
        for j, c in enumerate(res.contributions):
            for v, q in enumerate(c.path.points):
                rows.append([k, j, c.path.candidate.label, v, fmt(q[0]), fmt(q[1]), fmt(q[2])])
    return _csv(rows, ["ue_index", "path_index", "class", "vertex_index", "x", "y", "z"])


def emit_outputs(report: RunReport, out_dir, write_graph=False):
    """Write paths.json, fields.csv, classes.csv (one per UE when there are
    several) and polylines.csv; optionally the adjacency matrices."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        (out / name).write_text(text)
        written.append(out / name)

    put("paths.json", to_json(paths_document(report)) + "\n")
    put("fields.csv", fields_csv(report))
    if len(report.results) == 1:
        put("classes.csv", classes_csv(report.results[0].total))
    else:
        for k, res in enumerate(report.results):
            put(f"classes_ue{k}.csv", classes_csv(res.total))
    put("polylines.csv", polylines_csv(report))
    if write_graph:
        for k, res in enumerate(report.results):
            name = "adjacency.csv" if len(report.results) == 1 else f"adjacency_ue{k}.csv"
            put(name, res.graph.to_csv())
    return written
