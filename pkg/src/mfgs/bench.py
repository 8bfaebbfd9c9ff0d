"""Desk-scale benchmark hierarchies and on-disk model exchange.

The generated benchmark is the 1D heat equation ``x_t = kappa x_xx + b(xi) u``
on ``[0, 1]`` with Dirichlet ends, discretized on ``n`` interior nodes.
Actuator and sensor supports are fixed in physical coordinates, so one
controller acts on every refinement level and the levels approximate the same
continuous plant.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .lti import DescriptorPlant, ModelHierarchy, make_general_plant, make_normalized_lqg

__all__ = [
    "HeatHierarchySpec",
    "heat_matrices",
    "build_heat_hierarchy",
    "save_hierarchy",
    "load_hierarchy",
    "hierarchy_fingerprint",
]

PLANT_BLOCKS = ("E", "A", "B1", "B2", "C1", "C2", "D11", "D12", "D21")


@dataclass(frozen=True)
class HeatHierarchySpec:
    """Recipe for a refinement ladder of 1D heat plants.

    Attributes
    ----------
    levels : state dimensions, strictly increasing
    num_controls, num_outputs : actuator and sensor counts
    diffusivity : heat conduction coefficient
    formulation : ``"lqg"`` (normalized LQG wiring) or ``"general"``
    mass : ``"identity"`` (finite differences) or ``"fem"`` (linear elements, ``E`` = mass matrix)
    width : support width of each actuator and sensor
    """

    levels: tuple = (16, 64, 256)
    num_controls: int = 2
    num_outputs: int = 2
    diffusivity: float = 1.0
    formulation: str = "lqg"
    mass: str = "identity"
    width: float = 0.1

    def __post_init__(self):
        levels = tuple(int(n) for n in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError(f"levels must be nonempty and strictly increasing, got {levels}")
        if not 1 <= self.num_controls <= levels[0] or not 1 <= self.num_outputs <= levels[0]:
            raise ValueError("need 1 <= num_controls, num_outputs <= smallest level dimension")
        if self.diffusivity <= 0:
            raise ValueError("diffusivity must be positive")
        if self.formulation not in ("lqg", "general"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.mass not in ("identity", "fem"):
            raise ValueError(f"unknown mass option {self.mass!r}")
        if not 0 < self.width <= 1:
            raise ValueError("width must lie in (0, 1]")

    def actuator_centers(self) -> np.ndarray:
        m = self.num_controls
        return (2 * np.arange(m) + 1) / (2 * m)

    def sensor_centers(self) -> np.ndarray:
        p = self.num_outputs
        return np.arange(1, p + 1) / (p + 1)


def _overlap(nodes: np.ndarray, h: float, centers: np.ndarray, width: float) -> np.ndarray:
    """``|[xi_i - h/2, xi_i + h/2] cap [c_j - w/2, c_j + w/2]|`` clipped to the domain."""
    lo = np.clip(nodes - h / 2, 0.0, 1.0)[:, None]
    hi = np.clip(nodes + h / 2, 0.0, 1.0)[:, None]
    a = np.clip(centers - width / 2, 0.0, 1.0)[None, :]
    b = np.clip(centers + width / 2, 0.0, 1.0)[None, :]
    return np.maximum(0.0, np.minimum(hi, b) - np.maximum(lo, a))


def heat_matrices(n: int, spec: HeatHierarchySpec):
    """``(E, A, B, C)`` of one refinement level; ``B`` is ``n x m`` and ``C`` is ``p x n``."""
    h = 1.0 / (n + 1)
    nodes = h * np.arange(1, n + 1)
    lap = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]).toarray()
    act = _overlap(nodes, h, spec.actuator_centers(), spec.width) / spec.width
    sen = _overlap(nodes, h, spec.sensor_centers(), spec.width).T / spec.width
    if spec.mass == "identity":
        E = np.eye(n)
        A = spec.diffusivity / h ** 2 * lap
        B = act / h
    else:
        E = h / 6 * sp.diags([np.ones(n - 1), 4 * np.ones(n), np.ones(n - 1)],
                             [-1, 0, 1]).toarray()
        A = spec.diffusivity / h * lap
        B = act          # lumped load vector: integral of the bump over each cell
    return E, A, B, sen


def build_heat_hierarchy(spec: HeatHierarchySpec = HeatHierarchySpec()) -> ModelHierarchy:
    plants = []
    for n in spec.levels:
        E, A, B, C = heat_matrices(n, spec)
        if spec.formulation == "lqg":
            plants.append(make_normalized_lqg(E, A, B, C))
        else:
            # disturbances enter through the actuators and a uniform heat load
            B1 = np.hstack([B, np.full((n, 1), 1.0)]) if spec.mass == "identity" else \
                np.hstack([B, E @ np.ones((n, 1))])
            plants.append(make_general_plant(E, A, B1, B, C))
    return ModelHierarchy(plants)


def hierarchy_fingerprint(hier: ModelHierarchy) -> str:
    """Short content hash of all plant matrices, for provenance records."""
    digest = hashlib.sha256()
    for plant in hier.plants:
        for name in PLANT_BLOCKS:
            M = np.ascontiguousarray(getattr(plant, name))
            digest.update(name.encode())
            digest.update(np.array(M.shape, dtype=np.int64).tobytes())
            digest.update(M.tobytes())
    return digest.hexdigest()[:16]


def save_hierarchy(hier: ModelHierarchy, directory, meta: dict | None = None) -> Path:
    """Write one Matrix Market file per block and level plus ``manifest.json``.

    Returns the manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    levels = []
    for lvl, plant in enumerate(hier.plants, start=1):
        files = {}
        for name in PLANT_BLOCKS:
            fname = f"level{lvl}_{name}.mtx"
            M = getattr(plant, name)
            scipy.io.mmwrite(str(directory / fname), sp.coo_matrix(M), precision=17,
                             field="real")
            files[name] = fname
        levels.append({"n": plant.n, "files": files})
    m1, m2, p1, p2 = hier.io_dims
    manifest = {
        "levels": levels,
        "dims": {"m1": m1, "m2": m2, "p1": p1, "p2": p2},
        "meta": meta or {},
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _read_matrix(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing matrix file {path}")
    M = scipy.io.mmread(str(path))
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def load_hierarchy(manifest_path) -> ModelHierarchy:
    """Read a hierarchy written by :func:`save_hierarchy` (or by hand).

    Each level lists explicit files for ``E, A, B1, B2, C1, C2, D11, D12, D21``;
    an optional ``D22`` entry must be identically zero.  ``E`` may be omitted
    (identity).
    """
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    plants = []
    for lvl, entry in enumerate(manifest["levels"], start=1):
        files = entry["files"]
        blocks = {}
        for name in PLANT_BLOCKS:
            if name == "E" and "E" not in files:
                continue
            if name not in files:
                raise KeyError(f"level {lvl}: manifest lacks block {name}")
            blocks[name] = _read_matrix(root / files[name])
        if "E" not in blocks:
            blocks["E"] = np.eye(blocks["A"].shape[0])
        if "D22" in files:
            D22 = _read_matrix(root / files["D22"])
            if np.any(D22 != 0):
                raise ValueError(f"level {lvl}: nonzero D22 found; only plants without "
                                 "control-to-measurement feed-through are supported")
        plants.append(DescriptorPlant(**blocks))
    hier = ModelHierarchy(plants)
    dims = manifest.get("dims")
    if dims is not None:
        expected = (dims["m1"], dims["m2"], dims["p1"], dims["p2"])
        if tuple(hier.io_dims) != expected:
            raise ValueError(f"manifest dims {expected} disagree with matrices {hier.io_dims}")
    return hier
