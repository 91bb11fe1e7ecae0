"""Command line front end.

    minpath --scene builtin:urban --bs 0,22,0 --ue 8,2,0 --max-interactions 3 \
            --out-dir out --plots

Settings may also come from a JSON file given with ``--config``; its keys
are the long option names with dashes replaced by underscores.  Options on
the command line override the file.

Exit status: 0 on success, 2 for a configuration error, 3 for a scene error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .em import RadioConfig
from .mpt import SolverConfig
from .pipeline import SOLVERS, RunConfig, emit_outputs, fmt, run_pipeline
from .scenarios import builtin_names, load_builtin
from .scene import SceneError, load_scene

EXIT_OK, EXIT_CONFIG, EXIT_SCENE = 0, 2, 3

DEFAULTS = {
    "scene": None,
    "bs": None,
    "ue": None,
    "max_interactions": 2,
    "max_diffractions": None,
    "solver": "hybrid",
    "restarts": None,
    "threshold": 1e-12,
    "max_iters": 200,
    "seed": 0,
    "freq_hz": 1e9,
    "e0": 1.0,
    "polarization": "0,0,1",
    "visibility": "sampled",
    "allow_revisits": False,
    "workers": 1,
    "out_dir": "minpath_out",
    "plots": False,
    "dump_graph": False,
}


class ConfigError(Exception):
    pass


def parse_point(text):
    if isinstance(text, (list, tuple)):
        vals = list(text)
    else:
        vals = str(text).split(",")
    try:
        pt = tuple(float(v) for v in vals)
    except ValueError:
        raise ConfigError(f"bad point {text!r}, expected x,y,z") from None
    if len(pt) != 3:
        raise ConfigError(f"bad point {text!r}, expected x,y,z")
    return pt


def build_parser():
    p = argparse.ArgumentParser(
        prog="minpath",
        description="Find reflection/diffraction paths between a BS and UEs "
                    "and evaluate their fields.")
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--scene", help="scene JSON file, or builtin:NAME (%s)" % ", ".join(builtin_names()))
    p.add_argument("--bs", help="transmitter position x,y,z")
    p.add_argument("--ue", action="append", help="receiver position x,y,z (repeatable)")
    p.add_argument("--max-interactions", type=int, help="max interactions per path (default 2)")
    p.add_argument("--max-diffractions", type=int, help="max diffractions per path (default: all)")
    p.add_argument("--solver", choices=SOLVERS, help="path solver (default hybrid)")
    p.add_argument("--restarts", type=int, help="MPT random starts per candidate")
    p.add_argument("--threshold", type=float, help="MPT acceptance cost (default 1e-12)")
    p.add_argument("--max-iters", type=int, help="MPT iteration cap (default 200)")
    p.add_argument("--seed", type=int, help="RNG seed (default 0)")
    p.add_argument("--freq-hz", type=float, help="carrier frequency (default 1e9)")
    p.add_argument("--e0", type=float, help="field magnitude at 1 m (default 1)")
    p.add_argument("--polarization", help="antenna axis x,y,z (default 0,0,1)")
    p.add_argument("--visibility", choices=("sampled", "full"), help="visibility test")
    p.add_argument("--allow-revisits", action="store_true", default=None,
                   help="allow an element to appear more than once per path")
    p.add_argument("--workers", type=int, help="solver processes (default 1)")
    p.add_argument("--out-dir", help="output directory (default minpath_out)")
    p.add_argument("--plots", action="store_true", default=None, help="also write PNG figures")
    p.add_argument("--dump-graph", action="store_true", default=None,
                   help="also write the BS/UE adjacency matrix as CSV")
    return p


def merge_settings(args):
    settings = dict(DEFAULTS)
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        settings.update(data)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def make_run_config(s) -> RunConfig:
    if s["bs"] is None or not s["ue"]:
        raise ConfigError("--bs and at least one --ue are required")
    ues = s["ue"]
    if isinstance(ues, str) or (ues and isinstance(ues[0], (int, float))):
        ues = [ues]
    try:
        solver_cfg = SolverConfig(restarts=s["restarts"], max_iters=s["max_iters"],
                                  cost_threshold=s["threshold"], rng_seed=s["seed"])
        radio = RadioConfig(s["freq_hz"], s["e0"], parse_point(s["polarization"]))
        return RunConfig(parse_point(s["bs"]), [parse_point(u) for u in ues],
                         max_interactions=s["max_interactions"],
                         max_diffractions=s["max_diffractions"], solver=s["solver"],
                         solver_cfg=solver_cfg, radio=radio, visibility=s["visibility"],
                         allow_revisits=bool(s["allow_revisits"]), workers=s["workers"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def open_scene(spec):
    if spec is None:
        raise ConfigError("--scene is required")
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in builtin_names():
            raise ConfigError(f"unknown builtin scene {name!r}")
        return load_builtin(name)
    return load_scene(spec)


def summary(report) -> str:
    lines = []
    for k, res in enumerate(report.results):
        c = res.counters
        lines.append(f"UE {k} {res.ue}: {c.enumerated} candidates, {c.solved} solved, "
                     f"{c.unsolvable} unsolvable, {c.skipped} skipped, "
                     f"{c.valid}/{c.paths} paths valid")
        if c.paths > c.valid:
            lines.append("  rejected: " + ", ".join(f"{k2}={v}" for k2, v in c.rejected.items() if v))
        lines.append(f"  total field: {fmt(res.total.db)} dB re LOS")
        for row in res.total.classes:
            if row.n_paths:
                lines.append(f"  {row.label:>4} {row.n_paths:4d} {row.db:9.2f} dB")
    lines.append("timings: " + ", ".join(f"{k}={v:.3f}s" for k, v in report.timings.items()))
    return "\n".join(lines)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = merge_settings(args)
        cfg = make_run_config(settings)
        scene = open_scene(settings["scene"])
    except ConfigError as exc:
        print(f"minpath: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SceneError as exc:
        print(f"minpath: scene error: {exc}", file=sys.stderr)
        return EXIT_SCENE
    try:
        report = run_pipeline(scene, cfg)
    except SceneError as exc:
        print(f"minpath: scene error: {exc}", file=sys.stderr)
        return EXIT_SCENE
    except ValueError as exc:
        print(f"minpath: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = settings["out_dir"]
    written = emit_outputs(report, out, write_graph=bool(settings["dump_graph"]))
    if settings["plots"]:
        from .plotting import write_figures
        written += write_figures(scene, report, out)
    print(summary(report))
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
