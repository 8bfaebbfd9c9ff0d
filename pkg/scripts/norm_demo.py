"""Compare the level-set and grid H-infinity norm methods with a dense frequency sweep.

Prints value, peak frequency and timing for a lightly damped oscillator and
for the closed loops of the heat hierarchy under a random stabilizing controller.
"""
import math
import time

import numpy as np

from mfgs.analysis import hinf_norm, linf_oracle_grid
from mfgs.bench import build_heat_hierarchy
from mfgs.lti import ClosedLoop, Controller, assemble_closed_loop

SWEEP_MAX_ORDER = 100  # the dense sweep takes over a minute at order 258


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def show(label, cl):
    print(f"{label} (order {cl.order})")
    for method in ("levelset", "grid"):
        res, secs = timed(hinf_norm, cl, method=method)
        print(f"  {method:8s} value={res.value:.12g} omega={res.omega_peak:.6g} {secs * 1e3:.1f} ms")
    if cl.order <= SWEEP_MAX_ORDER:
        val, secs = timed(linf_oracle_grid, cl, 100_000)
        print(f"  sweep    value={val:.12g} {secs * 1e3:.1f} ms")


def main():
    z = 0.05
    osc = ClosedLoop.from_matrices(np.array([[0.0, 1.0], [-1.0, -2 * z]]),
                                   np.array([[0.0], [1.0]]), np.array([[1.0, 0.0]]),
                                   np.zeros((1, 1)))
    show(f"oscillator zeta={z}, exact {1 / (2 * z * math.sqrt(1 - z * z)):.12g}", osc)
    hier = build_heat_hierarchy()
    k = Controller(-np.eye(2), 0.1 * np.ones((2, 2)), 0.1 * np.ones((2, 2)), np.zeros((2, 2)))
    for lvl in range(1, hier.L + 1):
        show(f"heat level {lvl}", assemble_closed_loop(hier[lvl], k))


if __name__ == "__main__":
    main()
