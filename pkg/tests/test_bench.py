import json

import numpy as np
import pytest

from mfgs.analysis import spectral_abscissa
from mfgs.bench import (HeatHierarchySpec, build_heat_hierarchy, hierarchy_fingerprint,
                        heat_matrices, load_hierarchy, save_hierarchy)
from mfgs.lti import ClosedLoop, DimensionError


def _dc_gain(E, A, B, C):
    return C @ np.linalg.solve(-A, B)


def test_three_node_laplacian():
    E, A, _, _ = heat_matrices(3, HeatHierarchySpec(levels=(3,), num_controls=1, num_outputs=1))
    np.testing.assert_allclose(A, 16 * np.array([[-2, 1, 0], [1, -2, 1], [0, 1, -2]]))
    cl = ClosedLoop.from_matrices(A, np.ones((3, 1)), np.ones((1, 3)), np.zeros((1, 1)), E=E)
    assert spectral_abscissa(cl).alpha == pytest.approx(16 * (-2 + 2 * np.cos(np.pi / 4)))
    assert spectral_abscissa(cl).alpha == pytest.approx(-9.3726, abs=1e-4)


@pytest.mark.parametrize("mass", ["identity", "fem"])
def test_open_loop_stable_every_level(mass):
    hier = build_heat_hierarchy(HeatHierarchySpec(mass=mass))
    for p in hier.plants:
        cl = ClosedLoop.from_matrices(p.A, p.B1, p.C1, p.D11, E=p.E)
        assert spectral_abscissa(cl, vectors=False).alpha < 0


@pytest.mark.parametrize("mass", ["identity", "fem"])
def test_levels_agree_at_dc(mass):
    spec = HeatHierarchySpec(mass=mass)
    g = [_dc_gain(*heat_matrices(n, spec)) for n in spec.levels]
    assert np.max(np.abs(g[0] - g[-1])) <= 0.1 * np.linalg.norm(g[-1], 2)


def test_general_formulation_dims():
    hier = build_heat_hierarchy(HeatHierarchySpec(levels=(8, 16), formulation="general"))
    m1, m2, p1, p2 = hier.io_dims
    assert (m1, m2, p2) == (3, 2, 2) and p1 == 2


def test_invalid_specs():
    with pytest.raises(ValueError):
        HeatHierarchySpec(levels=(16, 8))
    with pytest.raises(ValueError):
        HeatHierarchySpec(formulation="rail")


def test_round_trip(tmp_path, small_heat):
    path = save_hierarchy(small_heat, tmp_path, meta={"note": "x"})
    back = load_hierarchy(path)
    for a, b in zip(small_heat.plants, back.plants):
        for name in ("E", "A", "B1", "B2", "C1", "C2", "D11", "D12", "D21"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert hierarchy_fingerprint(back) == hierarchy_fingerprint(small_heat)


def test_mismatched_measurements_rejected(tmp_path):
    a = build_heat_hierarchy(HeatHierarchySpec(levels=(8,)))
    b = build_heat_hierarchy(HeatHierarchySpec(levels=(16,), num_outputs=3))
    p1 = save_hierarchy(a, tmp_path / "a")
    save_hierarchy(b, tmp_path / "b")
    manifest = json.loads(p1.read_text())
    lvl2 = json.loads((tmp_path / "b" / "manifest.json").read_text())["levels"][0]
    lvl2["files"] = {k: f"../b/{v}" for k, v in lvl2["files"].items()}
    manifest["levels"].append(lvl2)
    manifest.pop("dims")
    p1.write_text(json.dumps(manifest))
    with pytest.raises(DimensionError, match="level 1 vs level 2"):
        load_hierarchy(p1)


def test_nonzero_d22_rejected(tmp_path, small_heat):
    path = save_hierarchy(small_heat, tmp_path)
    manifest = json.loads(path.read_text())
    D22 = np.ones((2, 2))
    import scipy.io
    scipy.io.mmwrite(str(tmp_path / "d22.mtx"), D22)
    manifest["levels"][0]["files"]["D22"] = "d22.mtx"
    path.write_text(json.dumps(manifest))
    with pytest.raises(ValueError, match="D22"):
        load_hierarchy(path)


def test_missing_file_reported(tmp_path, small_heat):
    path = save_hierarchy(small_heat, tmp_path)
    (tmp_path / "level2_A.mtx").unlink()
    with pytest.raises(FileNotFoundError, match="level2_A"):
        load_hierarchy(path)
