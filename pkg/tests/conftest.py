import numpy as np
import pytest

from mfgs.bench import HeatHierarchySpec, build_heat_hierarchy
from mfgs.lti import ClosedLoop

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_stable_system(rng, n, m, p, feedthrough=0.1, margin=(0.01, 1.0)):
    """Dense random ``(A, B, C, D)`` shifted so the spectral abscissa lies in ``-margin``."""
    A = rng.standard_normal((n, n))
    A -= (np.linalg.eigvals(A).real.max() + rng.uniform(*margin)) * np.eye(n)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    D = feedthrough * rng.standard_normal((p, m))
    return ClosedLoop.from_matrices(A, B, C, D)


def random_index1_descriptor(rng, n_diff, m, p):
    """Stable descriptor loop with one algebraic equation (singular ``E``)."""
    A = rng.standard_normal((n_diff, n_diff))
    A -= (np.linalg.eigvals(A).real.max() + 0.5) * np.eye(n_diff)
    n = n_diff + 1
    E = np.zeros((n, n))
    E[:n_diff, :n_diff] = np.eye(n_diff)
    Aa = np.zeros((n, n))
    Aa[:n_diff, :n_diff] = A
    Aa[n_diff, n_diff] = -1.0
    Aa[n_diff, :n_diff] = rng.standard_normal(n_diff)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    D = 0.1 * rng.standard_normal((p, m))
    return ClosedLoop.from_matrices(Aa, B, C, D, E=E)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_heat():
    return build_heat_hierarchy(HeatHierarchySpec(levels=(8, 16, 32)))


@pytest.fixture(scope="session")
def heat3():
    return build_heat_hierarchy(HeatHierarchySpec())
