import math

import numpy as np
import pytest

from mfgs.analysis import hinf_norm, spectral_abscissa
from mfgs.bench import HeatHierarchySpec, build_heat_hierarchy
from mfgs.grad import GradientError, fd_gradient, grad_hinf, grad_specabs
from mfgs.lti import Controller, ControllerLayout, DescriptorPlant, assemble_closed_loop
from mfgs.mf import HierarchyProblem


def _random_plant(rng, n=4, m1=2, m2=1, p1=2, p2=1):
    A = rng.standard_normal((n, n))
    A -= (np.linalg.eigvals(A).real.max() + 0.5) * np.eye(n)
    return DescriptorPlant(
        E=np.eye(n), A=A, B1=rng.standard_normal((n, m1)), B2=rng.standard_normal((n, m2)),
        C1=rng.standard_normal((p1, n)), C2=rng.standard_normal((p2, n)),
        D11=0.1 * rng.standard_normal((p1, m1)), D12=rng.standard_normal((p1, m2)),
        D21=rng.standard_normal((p2, m1)))


def _well_posed_draws(prob, rng, count, level=1, scale=0.3):
    """Stabilizing design vectors with a separated peak and a simple rightmost eigenvalue."""
    out = []
    while len(out) < count:
        x = scale * rng.standard_normal(prob.N)
        cl = assemble_closed_loop(prob.hier[level], prob.controller(x))
        sp = spectral_abscissa(cl)
        if sp.alpha >= 0 or sp.gap < 1e-3:
            continue
        if hinf_norm(cl).sv_gap < 1e-3:
            continue
        out.append(x)
    return out


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("free_dk", [False, True])
def test_hinf_gradient_matches_finite_differences(rng, free_dk):
    from mfgs.lti import ModelHierarchy
    hier = ModelHierarchy([_random_plant(rng)])
    prob = HierarchyProblem(hier, 2, dk_fixed_zero=not free_dk)
    for x in _well_posed_draws(prob, rng, 5):
        g = prob.grad_level(1, x)
        assert _rel(g, fd_gradient(prob.f(1), x)) < 1e-5


def test_specabs_gradient_matches_finite_differences(rng):
    from mfgs.lti import ModelHierarchy
    hier = ModelHierarchy([_random_plant(rng)])
    prob = HierarchyProblem(hier, 2)
    for x in _well_posed_draws(prob, rng, 5):
        assert _rel(prob.grad_h_level(1, x), fd_gradient(prob.h(1), x)) < 1e-5


def test_descriptor_fem_gradient(rng):
    hier = build_heat_hierarchy(HeatHierarchySpec(levels=(8,), mass="fem"))
    prob = HierarchyProblem(hier, 1)
    for x in _well_posed_draws(prob, rng, 3):
        assert _rel(prob.grad_level(1, x), fd_gradient(prob.f(1), x)) < 1e-5
        assert _rel(prob.grad_h_level(1, x), fd_gradient(prob.h(1), x)) < 1e-5


def test_gradient_vector_layout_matches_pack_order(rng):
    plant = _random_plant(rng, m2=2, p2=3)
    k = Controller.random(ControllerLayout(2, 2, 3), rng, 0.1)
    g = grad_specabs(plant, k)
    v = g.as_vector
    assert v.size == 4 + 6 + 4
    np.testing.assert_array_equal(v[:4], g.dAK.ravel(order="F"))


def test_hinf_gradient_refuses_unstable_loop(rng):
    plant = _random_plant(rng)
    k = Controller(np.array([[5.0]]), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    assert math.isinf(hinf_norm(assemble_closed_loop(plant, k)).value)
    with pytest.raises(GradientError):
        grad_hinf(plant, k)


def test_fd_gradient_on_quadratic():
    g = fd_gradient(lambda z: float(z @ z), np.array([1.0, -2.0, 3.0]))
    np.testing.assert_allclose(g, [2.0, -4.0, 6.0], rtol=1e-8)
