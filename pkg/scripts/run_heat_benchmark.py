"""Run HFGS, RMFGS and AMFGS on the three-level heat hierarchy and compare them.

Example::

    python scripts/run_heat_benchmark.py --seeds 0 1 --out runs/heat3

writes one run directory per (seed, method) plus a comparison per seed.
"""
import argparse
import json
from pathlib import Path

from mfgs.cli import ExperimentConfig, compare_runs, load_config, run_experiment, write_run

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--methods", nargs="+", default=["hfgs", "rmfgs", "amfgs"])
    ap.add_argument("--out", type=Path, default=Path("runs/heat3"))
    args = ap.parse_args()
    table = []
    for seed in args.seeds:
        dirs = []
        for method in args.methods:
            base = load_config(CONFIG_DIR / f"heat3_{method}.json").to_dict()
            out = args.out / f"seed{seed}" / method
            cfg = ExperimentConfig.from_dict({**base, "seed": seed, "out": str(out)})
            res, prob, hier = run_experiment(cfg)
            write_run(out, cfg, res, prob, hier)
            dirs.append(out)
            top = int(res.counts["n_geval"][hier.L])
            table.append((seed, method, res.f_final, top, res.wall_seconds))
            print(f"seed {seed} {method:5s} f_L={res.f_final:.6f} top-level gradients={top} "
                  f"wall={res.wall_seconds:.1f}s", flush=True)
        if "hfgs" in args.methods:
            report = compare_runs(dirs, args.out / f"seed{seed}" / "compare")
            print(json.dumps(report["methods"], indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
