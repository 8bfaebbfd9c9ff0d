"""Gradient sampling: ball sampling, the single step, the optimizer loop and stabilization.

The optimizer works on plain callables so it can drive the H-infinity
objective, the spectral-abscissa constraint, or any test function.  Gradient
callables signal "undefined here" by raising ``ArithmeticError`` (e.g.
:class:`mfgs.grad.GradientError` at an unstable sample point); such samples
are dropped from the hull, the anchor gradient at the iterate never is.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .qp import min_norm_hull

__all__ = [
    "GsParams",
    "StepInfo",
    "GsRecord",
    "GsTrace",
    "StabilizationError",
    "sample_ball",
    "gs_step",
    "run_gs",
    "stabilize",
]

Objective = Callable[[np.ndarray], float]
Gradient = Callable[[np.ndarray], np.ndarray]

# eps/nu reach their floors by repeated multiplication, which overshoots by an ulp or two
_FLOOR_SLACK = 1e-12


class StabilizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GsParams:
    """Tuning knobs of one gradient-sampling run.

    ``q=None`` means ``N + 2`` samples, resolved against the design dimension by
    :meth:`resolve`.
    """

    eps0: float = 0.1
    nu0: float = 0.1
    eps_opt: float = 1e-4
    nu_opt: float = 1e-4
    theta_eps: float = 0.1
    theta_nu: float = 0.1
    beta: float = 1e-4
    gamma: float = 0.5
    max_iters: int = 1000
    max_linesearch_halvings: int = 50
    q: Optional[int] = None

    def __post_init__(self):
        for name in ("theta_eps", "theta_nu", "beta", "gamma"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {val}")
        if not 0.0 < self.eps_opt <= self.eps0:
            raise ValueError(f"need 0 < eps_opt <= eps0, got {self.eps_opt}, {self.eps0}")
        if not 0.0 < self.nu_opt <= self.nu0:
            raise ValueError(f"need 0 < nu_opt <= nu0, got {self.nu_opt}, {self.nu0}")
        if self.max_iters < 0 or self.max_linesearch_halvings < 0:
            raise ValueError("iteration caps must be nonnegative")
        if self.q is not None and self.q < 1:
            raise ValueError("q must be positive")

    def resolve(self, N: int) -> "GsParams":
        q = N + 2 if self.q is None else self.q
        if q < N + 1:
            raise ValueError(f"sample size q={q} is below N+1={N + 1}")
        return replace(self, q=q)


@dataclass(frozen=True)
class StepInfo:
    branch: str          # "terminate" | "shrink" | "armijo"
    t: float
    n_evals: int
    f_next: float
    failed: bool = False


@dataclass(frozen=True)
class GsRecord:
    k: int
    level: int
    f_level: float
    f_L: float
    grad_norm: float
    eps: float
    nu: float
    step_t: float
    n_linesearch: int
    branch: str
    n_samples: int
    anchor_gap: float    # <g, grad f(x)> - ||g||^2, nonnegative up to QP accuracy
    wall_seconds: float


@dataclass
class GsTrace:
    records: list[GsRecord] = field(default_factory=list)
    status: str = "running"
    n_feval: int = 0
    n_geval: int = 0

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def sample_ball(x, eps: float, q: int, rng: np.random.Generator) -> list[np.ndarray]:
    """``q`` points i.i.d. uniform in the closed Euclidean ball ``B(x, eps)``."""
    x = np.asarray(x, dtype=float)
    N = x.size
    out = []
    for _ in range(q):
        d = rng.standard_normal(N)
        nrm = np.linalg.norm(d)
        while nrm == 0.0:
            d = rng.standard_normal(N)
            nrm = np.linalg.norm(d)
        r = eps * rng.random() ** (1.0 / N)
        out.append(x + (r / nrm) * d)
    return out


def gs_step(x, g, objective: Objective, eps: float, nu: float, params: GsParams,
            fx: Optional[float] = None):
    """One pass of the step rule: terminate, shrink, or Armijo line search.

    Returns ``(x_next, eps_next, nu_next, StepInfo)``.  A line search that runs
    out of halvings returns ``t = 0`` with ``x`` unchanged and ``failed=True``.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    gnorm = float(np.linalg.norm(g))
    n_evals = 0
    if fx is None:
        fx = objective(x)
        n_evals += 1
    if gnorm <= params.nu_opt * (1 + _FLOOR_SLACK) and eps <= params.eps_opt * (1 + _FLOOR_SLACK):
        return x, eps, nu, StepInfo("terminate", 0.0, n_evals, fx)
    if gnorm <= nu:
        return x, params.theta_eps * eps, params.theta_nu * nu, StepInfo("shrink", 0.0, n_evals, fx)
    decrease = params.beta * gnorm ** 2
    t = 1.0
    for _ in range(params.max_linesearch_halvings + 1):
        x_try = x - t * g
        f_try = objective(x_try)
        n_evals += 1
        if f_try < fx - decrease * t:  # inf and nan both fail here
            return x_try, eps, nu, StepInfo("armijo", t, n_evals, f_try)
        t *= params.gamma
    return x, eps, nu, StepInfo("armijo", 0.0, n_evals, fx, failed=True)


def _gradients(gradient: Gradient, points: Sequence[np.ndarray], executor) -> list:
    def safe(p):
        try:
            g = np.asarray(gradient(p), dtype=float)
        except ArithmeticError:
            return None
        return g if np.all(np.isfinite(g)) else None

    if executor is None:
        return [safe(p) for p in points]
    return list(executor.map(safe, points))


def run_gs(objective: Objective, gradient: Gradient, x0, params: GsParams,
           rng: np.random.Generator, *, sample_gradient: Optional[Gradient] = None,
           level: int = 1, report: Optional[Objective] = None, executor=None,
           stop_when: Optional[Callable[[float], bool]] = None, k0: int = 0,
           eps0: Optional[float] = None, nu0: Optional[float] = None,
           clock_start: Optional[float] = None,
           observer: Optional[Callable[[GsRecord], None]] = None):
    """Minimize ``objective`` by gradient sampling from ``x0``.

    Parameters
    ----------
    objective, gradient : callables
        ``objective`` may return ``inf`` (rejected by the line search).
        ``gradient`` is evaluated at the iterate (the anchor).
    sample_gradient : callable, optional
        Gradient used at the ``q`` sampled points; defaults to ``gradient``.
        Passing a cheaper surrogate gives the approximate multi-fidelity hull.
    report : callable, optional
        Extra value logged as ``f_L`` in each record (defaults to the objective value).
    executor : concurrent.futures.Executor, optional
        Evaluates the sampled gradients in parallel; results keep sample order.
    stop_when : callable, optional
        Early exit predicate on the current objective value, checked at ``x0``
        and after every iteration (status ``"target"``).
    observer : callable, optional
        Called with each new record right after it is appended.

    Returns
    -------
    x_final : ndarray
    trace : GsTrace
        ``status`` is one of ``converged``, ``iter_cap``, ``linesearch_cap``, ``target``.
    """
    x = np.array(x0, dtype=float)
    params = params.resolve(x.size)
    sample_gradient = gradient if sample_gradient is None else sample_gradient
    start = time.perf_counter() if clock_start is None else clock_start
    trace = GsTrace()

    fx = float(objective(x))
    trace.n_feval += 1
    if not math.isfinite(fx):
        raise ValueError("objective is not finite at the starting point; call stabilize first")
    if stop_when is not None and stop_when(fx):
        trace.status = "target"
        return x, trace

    eps = params.eps0 if eps0 is None else eps0
    nu = params.nu0 if nu0 is None else nu0
    for it in range(params.max_iters):
        points = sample_ball(x, eps, params.q, rng)
        anchor = np.asarray(gradient(x), dtype=float)
        samples = _gradients(sample_gradient, points, executor)
        trace.n_geval += 1 + len(points)
        cols = [anchor] + [s for s in samples if s is not None]
        hull = min_norm_hull(cols)
        g = hull.g_star
        x_new, eps_new, nu_new, info = gs_step(x, g, objective, eps, nu, params, fx=fx)
        trace.n_feval += info.n_evals
        unchanged = info.t == 0.0 and eps_new == eps and nu_new == nu
        x, eps, nu, fx = x_new, eps_new, nu_new, info.f_next
        trace.records.append(GsRecord(
            k=k0 + it + 1,
            level=level,
            f_level=fx,
            f_L=fx if report is None else float(report(x)),
            grad_norm=float(np.linalg.norm(g)),
            eps=eps,
            nu=nu,
            step_t=info.t,
            n_linesearch=info.n_evals,
            branch="failed" if info.failed else info.branch,
            n_samples=len(cols) - 1,
            anchor_gap=float(g @ anchor - g @ g),
            wall_seconds=time.perf_counter() - start,
        ))
        if observer is not None:
            observer(trace.records[-1])
        if unchanged:
            trace.status = "linesearch_cap" if info.failed else "converged"
            return x, trace
        if stop_when is not None and stop_when(fx):
            trace.status = "target"
            return x, trace
    trace.status = "iter_cap"
    return x, trace


def stabilize(h: Objective, grad_h: Gradient, x0, params: GsParams, rng: np.random.Generator,
              margin: Optional[float] = None, *, executor=None, level: int = 1,
              return_trace: bool = False):
    """Drive the spectral abscissa ``h`` below ``-margin`` by gradient sampling on ``h``.

    ``margin`` defaults to ``1e-6 * (1 + |h(x0)|)``.  A point is accepted only
    if ``h < 0`` strictly, so ``margin = 0`` still rejects the stability boundary.

    Raises
    ------
    StabilizationError
        If the run ends (any status) without reaching the target.
    """
    x0 = np.asarray(x0, dtype=float)
    h0 = float(h(x0))
    if not math.isfinite(h0):
        raise StabilizationError(f"constraint is not finite at the starting point (h={h0})")
    if margin is None:
        margin = 1e-6 * (1.0 + abs(h0))

    def reached(val: float) -> bool:
        return val < 0.0 and val <= -margin

    if reached(h0):
        return (x0.copy(), GsTrace(status="target")) if return_trace else x0.copy()
    x, trace = run_gs(h, grad_h, x0, params, rng, executor=executor, stop_when=reached,
                      level=level)
    if trace.status != "target":
        last = trace.records[-1].f_level if trace.records else h0
        raise StabilizationError(
            f"stabilization failed: h={last:.3e} after {len(trace)} iterations ({trace.status})")
    return (x, trace) if return_trace else x
