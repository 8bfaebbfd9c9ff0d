import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfgs.qp import min_norm_hull


def _brute_force(G, steps=40, h_min=1e-7):
    """Min ||G w|| over a simplex lattice, then local lattice refinement."""
    m = G.shape[1]
    pts = np.array([i for i in itertools.product(range(steps + 1), repeat=m - 1)
                    if sum(i) <= steps], dtype=float) / steps
    best = pts[np.argmin(np.linalg.norm(G[:, :-1] @ pts.T + G[:, -1:] * (1 - pts.sum(1)), axis=0))]
    offsets = np.array(list(itertools.product(range(-4, 5), repeat=m - 1)), dtype=float)
    h = 1.0 / steps
    while h > h_min:
        cand = best + h * offsets
        cand = cand[(cand >= 0).all(1) & (cand.sum(1) <= 1)]
        vals = np.linalg.norm(G[:, :-1] @ cand.T + G[:, -1:] * (1 - cand.sum(1)), axis=0)
        nxt = cand[np.argmin(vals)]
        if np.array_equal(nxt, best):
            h /= 2  # stay at this resolution until the best point stops moving
        best = nxt
    w = np.append(best, 1 - best.sum())
    return float(np.linalg.norm(G @ w))


def test_single_vector():
    res = min_norm_hull([np.array([3.0, 4.0])])
    np.testing.assert_array_equal(res.g_star, [3.0, 4.0])


def test_origin_inside_hull():
    res = min_norm_hull([np.array([1.0, 0.0]), np.array([-1.0, 1.0]), np.array([-1.0, -1.0])])
    assert np.linalg.norm(res.g_star) < 1e-12


def test_segment_projection():
    res = min_norm_hull([np.array([1.0, 1.0]), np.array([1.0, -1.0])])
    np.testing.assert_allclose(res.g_star, [1.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(res.weights, [0.5, 0.5])


def test_duplicates_collapse():
    a = np.array([1.0, 2.0])
    res = min_norm_hull([a, a, a])
    np.testing.assert_allclose(res.g_star, a)
    assert res.weights.sum() == pytest.approx(1.0)


def test_rejects_nonfinite():
    with pytest.raises(ValueError):
        min_norm_hull([np.array([np.inf, 0.0])])


def test_certificate_on_random_instances():
    rng = np.random.default_rng(7)
    worst = np.inf
    for _ in range(1000):
        n = int(rng.integers(1, 15))
        m = int(rng.integers(1, 18))
        G = rng.standard_normal((n, m)) * 10.0 ** rng.uniform(-3, 3)
        res = min_norm_hull(G)
        gs = res.g_star
        slack = res.certificate() + 1e-8 * (1 + gs @ gs)
        worst = min(worst, slack)
        assert res.weights.min() >= 0 and res.weights.sum() == pytest.approx(1.0)
    assert worst >= 0


@pytest.mark.parametrize("m", [2, 3, 4])
def test_matches_brute_force(m):
    rng = np.random.default_rng(m)
    for _ in range(20):
        G = rng.standard_normal((3, m))
        res = min_norm_hull(G)
        assert np.linalg.norm(res.g_star) == pytest.approx(_brute_force(G), abs=1e-4)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12), m=st.integers(1, 16))
def test_certificate_property(seed, n, m):
    G = np.random.default_rng(seed).standard_normal((n, m))
    res = min_norm_hull(G)
    gs = res.g_star
    assert res.certificate() >= -1e-8 * (1 + gs @ gs)
    np.testing.assert_allclose(G @ res.weights, gs)
