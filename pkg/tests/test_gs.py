import math

import numpy as np
import pytest

from mfgs.gs import GsParams, StabilizationError, gs_step, run_gs, sample_ball, stabilize

P = GsParams(eps0=0.1, nu0=0.1, eps_opt=1e-4, nu_opt=1e-4, q=4)


def sq(x):
    return float(x @ x)


def grad_sq(x):
    return 2 * np.asarray(x)


def test_terminate_branch_returns_inputs():
    x = np.array([1.0, 2.0])
    g = np.array([5e-5, 0.0])
    calls = []
    xn, e, n, info = gs_step(x, g, lambda z: calls.append(z) or 0.0, 1e-4, 1e-4, P, fx=3.0)
    assert info.branch == "terminate" and not calls
    assert xn is x or np.array_equal(xn, x)
    assert (e, n, info.t, info.f_next) == (1e-4, 1e-4, 0.0, 3.0)


def test_terminate_requires_small_radius():
    # small g but eps above eps_opt: shrink instead
    _, e, n, info = gs_step(np.zeros(2), np.array([1e-5, 0.0]), sq, 1e-3, 1e-3, P, fx=0.0)
    assert info.branch == "shrink"
    assert e == pytest.approx(1e-4) and n == pytest.approx(1e-4)


def test_shrink_branch_keeps_x():
    x = np.array([0.3, 0.1])
    xn, e, n, info = gs_step(x, np.array([0.05, 0.0]), sq, 0.1, 0.1, P)
    assert info.branch == "shrink" and np.array_equal(xn, x)
    assert e == pytest.approx(0.01) and n == pytest.approx(0.01)
    assert info.t == 0.0


def test_armijo_accepts_unit_step_when_sufficient():
    x = np.array([1.0, 0.0])
    g = np.array([0.5, 0.0])
    xn, e, n, info = gs_step(x, g, sq, 0.1, 0.1, P)
    assert info.branch == "armijo" and info.t == 1.0
    np.testing.assert_allclose(xn, [0.5, 0.0])
    assert (e, n) == (0.1, 0.1)


def test_armijo_halves_until_decrease():
    x = np.array([1.0])
    g = np.array([8.0])  # unit step lands at -7
    xn, _, _, info = gs_step(x, g, sq, 0.1, 0.1, P, fx=1.0)
    assert info.t == 0.125
    assert info.n_evals == 4
    assert sq(xn) < 1.0 - P.beta * 64 * 0.125


def test_armijo_rejects_infinite_values():
    # objective is +inf to the left of 0.9: only small steps are admissible
    f = lambda z: math.inf if z[0] < 0.9 else float(z[0])  # noqa: E731
    _, _, _, info = gs_step(np.array([1.0]), np.array([1.0]), f, 0.1, 0.1, P, fx=1.0)
    assert info.branch == "armijo" and info.t == 0.0625


def test_linesearch_cap_on_infinite_ray():
    f = lambda z: 0.0 if np.array_equal(z, [1.0]) else math.inf  # noqa: E731
    params = GsParams(max_linesearch_halvings=5, q=2)
    xn, e, n, info = gs_step(np.array([1.0]), np.array([1.0]), f, 0.1, 0.1, params, fx=0.0)
    assert info.failed and info.t == 0.0 and info.n_evals == 6
    np.testing.assert_array_equal(xn, [1.0])
    x, trace = run_gs(f, lambda z: np.ones(1), np.array([1.0]), params, np.random.default_rng(0))
    assert trace.status == "linesearch_cap" and len(trace) == 1
    assert trace.records[-1].branch == "failed"


def test_quadratic_converges():
    rng = np.random.default_rng(0)
    x, trace = run_gs(sq, grad_sq, np.array([1.0, 1.0]), GsParams(q=4, max_iters=200), rng)
    assert np.linalg.norm(x) <= 1e-2
    assert trace.status == "converged"
    last = trace.records[-1]
    assert last.grad_norm <= 1e-4 * (1 + 1e-12) and last.eps <= 1e-4 * (1 + 1e-12)


def test_nonsmooth_l1_converges():
    f = lambda z: abs(z[0]) + 10 * abs(z[1])  # noqa: E731
    gf = lambda z: np.array([np.sign(z[0]), 10 * np.sign(z[1])])  # noqa: E731
    x, trace = run_gs(f, gf, np.array([1.0, 0.7]), GsParams(max_iters=500),
                      np.random.default_rng(1))
    assert trace.status == "converged"
    assert f(x) < 1e-3
    assert np.all(np.diff(trace.column("f_level")) <= 0)


def test_zero_iterations():
    x, trace = run_gs(sq, grad_sq, np.ones(2), GsParams(max_iters=0), np.random.default_rng(0))
    assert trace.status == "iter_cap" and len(trace) == 0
    np.testing.assert_array_equal(x, np.ones(2))


def test_infinite_start_rejected():
    with pytest.raises(ValueError, match="stabilize"):
        run_gs(lambda z: math.inf, grad_sq, np.ones(2), P, np.random.default_rng(0))


def test_undefined_sample_gradients_are_dropped():
    def g(z):
        if z[0] > 1.0:
            raise ArithmeticError("undefined")
        return grad_sq(z)

    _, trace = run_gs(sq, g, np.array([1.0, 0.0]), GsParams(max_iters=1, q=20),
                      np.random.default_rng(3))
    assert trace.records[0].n_samples < 20


def test_rejects_too_few_samples():
    with pytest.raises(ValueError, match="q=2"):
        GsParams(q=2).resolve(5)


def test_schedule_validation():
    with pytest.raises(ValueError):
        GsParams(eps0=1e-5, eps_opt=1e-4)
    with pytest.raises(ValueError):
        GsParams(gamma=1.0)


def test_ball_samples_inside_and_uniform():
    rng = np.random.default_rng(11)
    x = np.array([1.0, -2.0])
    pts = np.array(sample_ball(x, 0.5, 40000, rng))
    r = np.linalg.norm(pts - x, axis=1)
    assert r.max() <= 0.5
    # in 2-D a quarter of the mass lies inside half the radius
    assert abs(np.mean(r <= 0.25) - 0.25) < 0.01


def test_ball_tiny_radius_collapses():
    x = np.array([1.0, 2.0, 3.0])
    for p in sample_ball(x, 1e-300, 5, np.random.default_rng(0)):
        np.testing.assert_array_equal(p, x)


def test_same_seed_same_trace():
    runs = [run_gs(sq, grad_sq, np.array([1.0, 1.0]), P, np.random.default_rng(5))[1]
            for _ in range(2)]
    assert runs[0].records == [r.__class__(**{**r.__dict__, "wall_seconds": a.wall_seconds})
                               for a, r in zip(runs[0].records, runs[1].records)]


def test_stabilize_reaches_negative_value():
    h = lambda z: float(np.max(z))  # noqa: E731

    def gh(z):
        g = np.zeros_like(z)
        g[np.argmax(z)] = 1.0
        return g

    x = stabilize(h, gh, np.array([2.0, 1.0, 0.5]), GsParams(max_iters=500),
                  np.random.default_rng(0))
    assert h(x) < 0


def test_stabilize_noop_when_already_stable():
    x0 = np.array([-1.0])
    x, trace = stabilize(lambda z: float(z[0]), lambda z: np.ones(1), x0, P,
                         np.random.default_rng(0), return_trace=True)
    np.testing.assert_array_equal(x, x0)
    assert len(trace) == 0


def test_stabilize_failure_raises():
    # bounded below by 1: can never become negative
    h = lambda z: 1.0 + float(z @ z)  # noqa: E731
    with pytest.raises(StabilizationError, match="stabilization failed"):
        stabilize(h, lambda z: 2 * z, np.ones(2), GsParams(max_iters=30),
                  np.random.default_rng(0))
