"""Multi-fidelity drivers over a model hierarchy.

:class:`HierarchyProblem` turns a :class:`~mfgs.lti.ModelHierarchy` into
per-level objective/constraint callables on the design vector and keeps the
per-level evaluation counters that serve as the cost currency.  The drivers
are

* ``run_hfgs``  - plain gradient sampling on the top level;
* ``run_rmfgs`` - level by level, each level warm-started at the previous result;
* ``run_amfgs`` - line search on the top level throughout, with the sampled
  gradients taken from the current (cheaper) level.
"""
from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .analysis import NormResult, SpectralResult, hinf_norm, spectral_abscissa
from .grad import grad_hinf, grad_specabs
from .gs import GsParams, GsRecord, GsTrace, run_gs, stabilize
from .lti import (Controller, ControllerLayout, ModelHierarchy, assemble_closed_loop,
                  pack_controller, unpack_controller)

__all__ = [
    "HierarchyProblem",
    "LevelSchedule",
    "MfResult",
    "default_schedule",
    "run_hfgs",
    "run_rmfgs",
    "run_amfgs",
]

LevelSchedule = Sequence[GsParams]
COUNTERS = ("n_feval", "n_geval", "n_heval", "n_hgeval", "n_report")


class HierarchyProblem:
    """Per-level ``f``, ``grad f``, ``h`` and ``grad h`` as functions of the design vector.

    Every public evaluation bumps exactly one counter of its level.  The last
    norm and spectral result per level is cached, so a gradient requested at
    the point just evaluated reuses the peak data without recounting.
    """

    def __init__(self, hier: ModelHierarchy, nK: int, dk_fixed_zero: bool = True,
                 norm_method: str = "levelset", norm_tol: float = 1e-8,
                 grid_points: int = 2000):
        self.hier = hier
        self.layout: ControllerLayout = hier.layout(nK, dk_fixed_zero)
        self.norm_method = norm_method
        self.norm_tol = norm_tol
        self.grid_points = grid_points
        self.counts = {name: np.zeros(hier.L + 1, dtype=np.int64) for name in COUNTERS}
        self._lock = threading.Lock()
        self._norm_cache: dict[int, tuple[bytes, NormResult]] = {}
        self._spec_cache: dict[int, tuple[bytes, SpectralResult]] = {}

    @property
    def L(self) -> int:
        return self.hier.L

    @property
    def N(self) -> int:
        return self.layout.size

    def _bump(self, name: str, level: int) -> None:
        with self._lock:
            self.counts[name][level] += 1

    def counter(self, name: str, level: int) -> int:
        return int(self.counts[name][level])

    def snapshot(self) -> dict:
        return {name: arr.copy() for name, arr in self.counts.items()}

    def controller(self, x) -> Controller:
        return unpack_controller(x, self.layout)

    def pack(self, k: Controller) -> np.ndarray:
        return pack_controller(k)

    def _norm(self, level: int, x: np.ndarray) -> NormResult:
        key = np.asarray(x, dtype=float).tobytes()
        hit = self._norm_cache.get(level)
        if hit is not None and hit[0] == key:
            return hit[1]
        cl = assemble_closed_loop(self.hier[level], self.controller(x), level=level)
        res = hinf_norm(cl, self.norm_tol, self.norm_method, self.grid_points)
        self._norm_cache[level] = (key, res)
        return res

    def _spec(self, level: int, x: np.ndarray) -> SpectralResult:
        key = np.asarray(x, dtype=float).tobytes()
        hit = self._spec_cache.get(level)
        if hit is not None and hit[0] == key:
            return hit[1]
        cl = assemble_closed_loop(self.hier[level], self.controller(x), level=level)
        res = spectral_abscissa(cl, vectors=True)
        self._spec_cache[level] = (key, res)
        return res

    def eval_level(self, level: int, x) -> float:
        """``f^level(x)``; ``inf`` at non-stabilizing controllers."""
        self._bump("n_feval", level)
        return float(self._norm(level, x).value)

    def grad_level(self, level: int, x) -> np.ndarray:
        self._bump("n_geval", level)
        x = np.asarray(x, dtype=float)
        res = self._norm(level, x)
        return grad_hinf(self.hier[level], self.controller(x), norm=res).as_vector

    def h_level(self, level: int, x) -> float:
        """Spectral abscissa of the level's closed-loop pencil."""
        self._bump("n_heval", level)
        return float(self._spec(level, x).alpha)

    def grad_h_level(self, level: int, x) -> np.ndarray:
        self._bump("n_hgeval", level)
        x = np.asarray(x, dtype=float)
        res = self._spec(level, x)
        return grad_specabs(self.hier[level], self.controller(x), spec=res).as_vector

    def report_level(self, level: int, x) -> float:
        """Same value as :meth:`eval_level`, tallied separately as reporting cost."""
        self._bump("n_report", level)
        return float(self._norm(level, x).value)

    # bound callables for the optimizer
    def f(self, level: int) -> Callable:
        return lambda x: self.eval_level(level, x)

    def g(self, level: int) -> Callable:
        return lambda x: self.grad_level(level, x)

    def h(self, level: int) -> Callable:
        return lambda x: self.h_level(level, x)

    def gh(self, level: int) -> Callable:
        return lambda x: self.grad_h_level(level, x)


@dataclass
class LevelOutcome:
    level: int
    params: GsParams
    trace: GsTrace
    stab_trace: Optional[GsTrace]
    f_level: float
    f_L: float


@dataclass
class MfResult:
    """Outcome of one driver run.

    ``rows`` pairs every trace record with a snapshot of all evaluation
    counters taken right after that iteration.
    """

    method: str
    x_final: np.ndarray
    controller: Controller
    levels: list[LevelOutcome]
    rows: list[tuple[GsRecord, dict]]
    counts: dict
    wall_seconds: float
    f_final: float = math.nan

    @property
    def records(self) -> list[GsRecord]:
        return [r for r, _ in self.rows]

    def terminal_values(self) -> list[tuple[int, float, float]]:
        """``(level, f^level(x^{k_level}), f^L(x^{k_level}))`` per level."""
        return [(o.level, o.f_level, o.f_L) for o in self.levels]


def default_schedule(L: int, method: str = "rmfgs", max_iters: int | Sequence[int] = 1000,
                     q: Optional[int] = None) -> list[GsParams]:
    """Decade-decreasing per-level radii and targets.

    Level ``l`` starts at ``eps0 = nu0 = max(10^-l, 1e-4)``.  RMFGS terminates
    every level at ``1e-4``; AMFGS uses ``max(10^-(l+1), 1e-4)`` below the top
    level.  ``hfgs`` returns a single entry with ``eps0 = nu0 = 0.1``.
    """
    if method not in ("hfgs", "rmfgs", "amfgs"):
        raise ValueError(f"unknown method {method!r}")
    n_levels = 1 if method == "hfgs" else L
    caps = [max_iters] * n_levels if isinstance(max_iters, int) else list(max_iters)
    if len(caps) != n_levels:
        raise ValueError(f"need {n_levels} iteration caps, got {len(caps)}")
    out = []
    for lvl in range(1, n_levels + 1):
        start = 0.1 if method == "hfgs" else max(10.0 ** -lvl, 1e-4)
        opt = 1e-4
        if method == "amfgs" and lvl < L:
            opt = max(10.0 ** -(lvl + 1), 1e-4)
        out.append(GsParams(eps0=start, nu0=start, eps_opt=opt, nu_opt=opt,
                            max_iters=caps[lvl - 1], q=q))
    return out


def _initial_point(prob: HierarchyProblem, k0) -> np.ndarray:
    if isinstance(k0, Controller):
        if k0.layout != prob.layout:
            raise ValueError(f"controller layout {k0.layout} does not match {prob.layout}")
        return pack_controller(k0)
    x0 = np.asarray(k0, dtype=float).ravel()
    if x0.size != prob.N:
        raise ValueError(f"design vector has length {x0.size}, expected {prob.N}")
    return x0


def _run_level(prob, objective, gradient, x, params, rng, *, sample_gradient=None, level,
               report=None, executor=None, k0=0, clock_start=None, rows=None):
    pending: list[dict] = []

    def observe(_rec):
        pending.append(prob.snapshot())

    x, trace = run_gs(objective, gradient, x, params, rng, sample_gradient=sample_gradient,
                      level=level, report=report, executor=executor, k0=k0,
                      clock_start=clock_start, observer=observe)
    if rows is not None:
        rows.extend(zip(trace.records, pending))
    return x, trace


def _stabilize_if_needed(prob, level, x, params, rng, executor, margin=None):
    if math.isfinite(prob.eval_level(level, x)):
        return x, None
    stab_params = replace(params, max_iters=max(params.max_iters, 200))
    x, trace = stabilize(prob.h(level), prob.gh(level), x, stab_params, rng, margin,
                         executor=executor, level=level, return_trace=True)
    return x, trace


def run_hfgs(prob: HierarchyProblem, k0, sched: Optional[LevelSchedule] = None,
             rng: Optional[np.random.Generator] = None, *, executor=None,
             stab_params: Optional[GsParams] = None) -> MfResult:
    """Single-fidelity gradient sampling on the top level."""
    sched = default_schedule(prob.L, "hfgs") if sched is None else list(sched)
    if len(sched) != 1:
        raise ValueError("hfgs takes a single-entry schedule")
    rng = np.random.default_rng() if rng is None else rng
    start = time.perf_counter()
    L = prob.L
    x = _initial_point(prob, k0)
    x, stab = _stabilize_if_needed(prob, L, x, stab_params or sched[0], rng, executor)
    rows: list = []
    x, trace = _run_level(prob, prob.f(L), prob.g(L), x, sched[0], rng, level=L,
                          executor=executor, clock_start=start, rows=rows)
    fL = prob.report_level(L, x)
    outcome = LevelOutcome(L, sched[0], trace, stab, fL, fL)
    return MfResult("hfgs", x, prob.controller(x), [outcome], rows, prob.snapshot(),
                    time.perf_counter() - start, fL)


def run_rmfgs(prob: HierarchyProblem, k0, sched: Optional[LevelSchedule] = None,
              rng: Optional[np.random.Generator] = None, *, executor=None,
              stab_params: Optional[GsParams] = None,
              report_every_iterate: bool = False) -> MfResult:
    """Restarted multi-fidelity gradient sampling.

    ``f^L`` is evaluated a posteriori at each level's final iterate (counted as
    reporting cost); ``report_every_iterate=True`` does it at every iterate.
    Records below the top level carry ``f_L = nan`` unless that flag is set.
    """
    L = prob.L
    sched = default_schedule(L, "rmfgs") if sched is None else list(sched)
    if len(sched) != L:
        raise ValueError(f"schedule has {len(sched)} entries for {L} levels")
    rng = np.random.default_rng() if rng is None else rng
    start = time.perf_counter()
    x = _initial_point(prob, k0)
    rows: list = []
    levels = []
    k = 0
    for lvl in range(1, L + 1):
        params = sched[lvl - 1]
        x, stab = _stabilize_if_needed(prob, lvl, x, stab_params or params, rng, executor)
        if lvl == L:
            report = None
        elif report_every_iterate:
            report = lambda z: prob.report_level(L, z)  # noqa: E731
        else:
            report = lambda z: math.nan  # noqa: E731
        x, trace = _run_level(prob, prob.f(lvl), prob.g(lvl), x, params, rng, level=lvl,
                              report=report, executor=executor, k0=k, clock_start=start,
                              rows=rows)
        k += len(trace)
        f_lvl = prob.report_level(lvl, x)
        fL = f_lvl if lvl == L else prob.report_level(L, x)
        levels.append(LevelOutcome(lvl, params, trace, stab, f_lvl, fL))
    return MfResult("rmfgs", x, prob.controller(x), levels, rows, prob.snapshot(),
                    time.perf_counter() - start, levels[-1].f_L)


def run_amfgs(prob: HierarchyProblem, k0, sched: Optional[LevelSchedule] = None,
              rng: Optional[np.random.Generator] = None, *, executor=None,
              stab_params: Optional[GsParams] = None) -> MfResult:
    """Approximate multi-fidelity gradient sampling.

    The line search and the anchor gradient use the top level at every phase;
    only the ``q`` sampled gradients come from level ``l``.
    """
    L = prob.L
    sched = default_schedule(L, "amfgs") if sched is None else list(sched)
    if len(sched) != L:
        raise ValueError(f"schedule has {len(sched)} entries for {L} levels")
    rng = np.random.default_rng() if rng is None else rng
    start = time.perf_counter()
    x = _initial_point(prob, k0)
    x, stab = _stabilize_if_needed(prob, L, x, stab_params or sched[0], rng, executor)
    rows: list = []
    levels = []
    k = 0
    for lvl in range(1, L + 1):
        params = sched[lvl - 1]
        x, trace = _run_level(prob, prob.f(L), prob.g(L), x, params, rng,
                              sample_gradient=prob.g(lvl), level=lvl, executor=executor,
                              k0=k, clock_start=start, rows=rows)
        k += len(trace)
        fL = prob.report_level(L, x)
        f_lvl = fL if lvl == L else prob.report_level(lvl, x)
        levels.append(LevelOutcome(lvl, params, trace, stab if lvl == 1 else None, f_lvl, fL))
    return MfResult("amfgs", x, prob.controller(x), levels, rows, prob.snapshot(),
                    time.perf_counter() - start, levels[-1].f_L)
