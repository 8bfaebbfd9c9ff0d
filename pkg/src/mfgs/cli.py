"""Command-line driver: ``mfgs run | compare | validate | generate``.

A run writes four artifacts into its output directory:

``trace.csv``
    one row per optimizer iteration with per-level evaluation counters;
    contains no timing, so identical seeds give byte-identical files.
``timing.csv``
    ``k, wall_seconds`` for the same rows.
``summary.json``
    configuration, seed, model fingerprint and per-level terminal values.
``controller_AK.mtx`` ... ``controller_DK.mtx``
    the final controller.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

from .analysis import spectral_abscissa
from .bench import HeatHierarchySpec, build_heat_hierarchy, hierarchy_fingerprint, \
    load_hierarchy, save_hierarchy
from .gs import GsParams
from .lti import ClosedLoop, Controller, ModelHierarchy
from .mf import HierarchyProblem, MfResult, default_schedule, run_amfgs, run_hfgs, run_rmfgs

__all__ = [
    "ExperimentConfig",
    "load_config",
    "build_hierarchy",
    "run_experiment",
    "write_run",
    "read_trace",
    "compare_runs",
    "main",
]

METHODS = {"hfgs": run_hfgs, "rmfgs": run_rmfgs, "amfgs": run_amfgs}
TRACE_FIELDS = ("level", "k", "f_level", "f_L", "grad_norm", "eps", "nu", "step_t", "branch")


@dataclass
class ExperimentConfig:
    """Everything that determines one optimizer run.

    ``model`` is either ``{"heat": {...HeatHierarchySpec fields...}}`` or
    ``{"manifest": "path/to/manifest.json"}``.  ``max_iters`` is one cap for
    every level or a per-level list; ``schedule`` optionally overrides
    individual :class:`~mfgs.gs.GsParams` fields per level.
    """

    method: str = "rmfgs"
    model: dict = field(default_factory=lambda: {"heat": {}})
    nK: int = 2
    dk_fixed_zero: bool = True
    seed: int = 0
    init_scale: float = 1.0
    max_iters: object = 1000
    q: Optional[int] = None
    schedule: Optional[list] = None
    norm_method: str = "grid"
    grid_points: int = 300
    report_every_iterate: bool = False
    threads: int = 1
    out: str = "runs/latest"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {sorted(METHODS)}, got {self.method!r}")
        if set(self.model) - {"heat", "manifest"} or len(self.model) != 1:
            raise ValueError("model must have exactly one of the keys 'heat' or 'manifest'")
        if self.norm_method not in ("grid", "levelset"):
            raise ValueError(f"unknown norm_method {self.norm_method!r}")
        if self.nK < 0 or self.threads < 1:
            raise ValueError("nK must be >= 0 and threads >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def build_hierarchy(cfg: ExperimentConfig, base: Optional[Path] = None) -> ModelHierarchy:
    if "heat" in cfg.model:
        return build_heat_hierarchy(HeatHierarchySpec(**cfg.model["heat"]))
    path = Path(cfg.model["manifest"])
    if base is not None and not path.is_absolute():
        path = base / path
    return load_hierarchy(path)


def _schedule(cfg: ExperimentConfig, L: int) -> list[GsParams]:
    sched = default_schedule(L, cfg.method, cfg.max_iters, cfg.q)
    if cfg.schedule is not None:
        if len(cfg.schedule) != len(sched):
            raise ValueError(f"schedule override has {len(cfg.schedule)} entries, "
                             f"method {cfg.method} needs {len(sched)}")
        sched = [GsParams(**{**asdict(p), **over}) for p, over in zip(sched, cfg.schedule)]
    return sched


def run_experiment(cfg: ExperimentConfig, hier: Optional[ModelHierarchy] = None):
    """Run the configured method; returns ``(result, problem, hierarchy)``."""
    hier = build_hierarchy(cfg) if hier is None else hier
    prob = HierarchyProblem(hier, cfg.nK, cfg.dk_fixed_zero, cfg.norm_method,
                            grid_points=cfg.grid_points)
    rng = np.random.default_rng(cfg.seed)
    k0 = Controller.random(prob.layout, rng, cfg.init_scale)
    sched = _schedule(cfg, hier.L)
    kwargs = {"report_every_iterate": True} if cfg.report_every_iterate and \
        cfg.method == "rmfgs" else {}
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            res = METHODS[cfg.method](prob, k0, sched, rng, executor=pool, **kwargs)
    else:
        res = METHODS[cfg.method](prob, k0, sched, rng, **kwargs)
    return res, prob, hier


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_run(out_dir, cfg: ExperimentConfig, res: MfResult, prob: HierarchyProblem,
              hier: ModelHierarchy) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    L = hier.L
    header = list(TRACE_FIELDS) + [f"n_feval_level{l}" for l in range(1, L + 1)] + \
        [f"n_geval_level{l}" for l in range(1, L + 1)]
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec, counts in res.rows:
            row = [_fmt(getattr(rec, name)) for name in TRACE_FIELDS]
            row += [str(int(c)) for c in counts["n_feval"][1:]]
            row += [str(int(c)) for c in counts["n_geval"][1:]]
            w.writerow(row)
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "wall_seconds"])
        for rec, _ in res.rows:
            w.writerow([rec.k, _fmt(rec.wall_seconds)])
    summary = {
        "method": res.method,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "model_fingerprint": hierarchy_fingerprint(hier),
        "state_dims": [p.n for p in hier.plants],
        "N": prob.N,
        "f_final": res.f_final,
        "levels": [
            {
                "level": o.level,
                "status": o.trace.status,
                "iterations": len(o.trace),
                "stabilization_iterations": None if o.stab_trace is None else len(o.stab_trace),
                "f_level": o.f_level,
                "f_L": o.f_L,
                "final_grad_norm": o.trace.records[-1].grad_norm if len(o.trace) else None,
                "final_eps": o.trace.records[-1].eps if len(o.trace) else None,
            }
            for o in res.levels
        ],
        "counts": {name: [int(c) for c in arr[1:]] for name, arr in res.counts.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True,
                                                 allow_nan=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"wall_seconds": res.wall_seconds}) + "\n")
    k = res.controller
    for name in ("AK", "BK", "CK", "DK"):
        scipy.io.mmwrite(str(out / f"controller_{name}.mtx"), sp.coo_matrix(getattr(k, name)),
                         precision=17, field="real")
    return out


def read_trace(run_dir) -> dict:
    """Trace columns of a run directory as numpy arrays (``branch`` stays a list of str)."""
    run_dir = Path(run_dir)
    with open(run_dir / "trace.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols: dict = {}
    names = rows[0].keys() if rows else []
    for name in names:
        vals = [r[name] for r in rows]
        if name == "branch":
            cols[name] = vals
        elif name in ("level", "k") or name.startswith("n_"):
            cols[name] = np.array([int(v) for v in vals], dtype=np.int64)
        else:
            cols[name] = np.array([float(v) for v in vals])
    timing = run_dir / "timing.csv"
    if timing.is_file():
        with open(timing, newline="") as fh:
            t = {int(r["k"]): float(r["wall_seconds"]) for r in csv.DictReader(fh)}
        cols["wall_seconds"] = np.array([t.get(int(k), math.nan) for k in cols.get("k", [])])
    return cols


def _first_reach(values: np.ndarray, target: float) -> Optional[int]:
    idx = np.flatnonzero(values <= target)
    return int(idx[0]) if idx.size else None


def compare_runs(run_dirs: Sequence, out_dir, reference: str = "hfgs") -> dict:
    """Merge several runs into a comparison table and a speedup report.

    Rows whose ``f_L`` was not evaluated (RMFGS below the top level) are
    skipped.  The speedup of a method is measured to the first row with
    ``f_L`` at or below the reference method's terminal value, both in wall
    time and in top-level gradient evaluations.
    """
    runs = {}
    for d in run_dirs:
        summary = json.loads((Path(d) / "summary.json").read_text())
        runs[summary["method"]] = (summary, read_trace(d))
    finals = [s["f_final"] for s, _ in runs.values() if math.isfinite(s["f_final"])]
    f_min = min(finals) if finals else math.nan
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "level", "k", "wall_seconds", "f_L", "rel_error"])
        for method, (_, tr) in sorted(runs.items()):
            for i in range(len(tr.get("k", []))):
                fL = tr["f_L"][i]
                if not math.isfinite(fL):
                    continue
                w.writerow([method, int(tr["level"][i]), int(tr["k"][i]),
                            _fmt(tr["wall_seconds"][i]), _fmt(fL), _fmt((fL - f_min) / f_min)])
    report = {"f_min": f_min, "reference": reference, "methods": {}}
    ref = runs.get(reference)
    for method, (summary, tr) in sorted(runs.items()):
        L = len(summary["state_dims"])
        top = f"n_geval_level{L}"
        entry = {"f_final": summary["f_final"],
                 "top_level_gradients": int(tr[top][-1]) if len(tr.get("k", [])) else 0}
        if ref is not None:
            target = ref[0]["f_final"]
            ref_tr = ref[1]
            i = _first_reach(tr["f_L"], target) if len(tr.get("k", [])) else None
            entry["reaches_reference"] = i is not None
            if i is not None and len(ref_tr.get("k", [])):
                t_ref = ref_tr["wall_seconds"][-1]
                g_ref = int(ref_tr[top][-1])
                entry["wall_to_reference"] = float(tr["wall_seconds"][i])
                entry["top_gradients_to_reference"] = int(tr[top][i])
                entry["speedup_wall"] = t_ref / tr["wall_seconds"][i] \
                    if tr["wall_seconds"][i] > 0 else math.inf
                entry["speedup_gradients"] = g_ref / tr[top][i] if tr[top][i] > 0 else math.inf
        report["methods"][method] = entry
    (out / "speedup.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _validate(hier: ModelHierarchy, nK: int) -> list[str]:
    lines = []
    for lvl, plant in enumerate(hier.plants, start=1):
        cl = ClosedLoop.from_matrices(plant.A, plant.B1, plant.C1, plant.D11, E=plant.E)
        alpha = spectral_abscissa(cl, vectors=False).alpha
        lines.append(f"level {lvl}: n={plant.n} dims(m1,m2,p1,p2)={plant.io_dims} "
                     f"open-loop alpha={alpha:.6g}")
    lines.append(f"design vector length N={hier.layout(nK).size} at nK={nK}")
    lines.append(f"fingerprint {hierarchy_fingerprint(hier)}")
    return lines


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfgs", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("run", "validate", "generate"):
        s = sub.add_parser(verb)
        s.add_argument("--config", type=Path, help="JSON experiment config")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", type=Path)
        if verb == "run":
            s.add_argument("--method", choices=sorted(METHODS))
    c = sub.add_parser("compare")
    c.add_argument("runs", nargs="+", type=Path, help="run directories")
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--reference", default="hfgs")
    return p


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    data = cfg.to_dict()
    for key in ("seed", "threads", "method"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if args.out is not None:
        data["out"] = str(args.out)
    return ExperimentConfig.from_dict(data)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.verb == "compare":
        report = compare_runs(args.runs, args.out, args.reference)
        print(json.dumps(report, indent=2, sort_keys=True))
        return 0
    cfg = _config_from_args(args)
    base = args.config.parent if args.config else None
    if args.verb == "generate":
        spec = HeatHierarchySpec(**cfg.model.get("heat", {}))
        path = save_hierarchy(build_heat_hierarchy(spec), cfg.out, meta={"heat": asdict(spec)})
        print(path)
        return 0
    hier = build_hierarchy(cfg, base)
    if args.verb == "validate":
        print("\n".join(_validate(hier, cfg.nK)))
        return 0
    res, prob, hier = run_experiment(cfg, hier)
    out = write_run(cfg.out, cfg, res, prob, hier)
    for o in res.levels:
        print(f"level {o.level}: {o.trace.status} after {len(o.trace)} iterations, "
              f"f_level={o.f_level:.6g} f_L={o.f_L:.6g}")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
