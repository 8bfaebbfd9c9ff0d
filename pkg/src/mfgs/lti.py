"""Plants, controllers, closed-loop assembly and design-vector packing.

All matrices are dense ``float64`` arrays and are made read-only on
construction, so instances can be shared freely.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "IrregularPencilError",
    "DescriptorPlant",
    "Controller",
    "ControllerLayout",
    "ClosedLoop",
    "ModelHierarchy",
    "assemble_closed_loop",
    "pack_controller",
    "unpack_controller",
    "make_normalized_lqg",
    "make_general_plant",
]

# probe shifts for the pencil regularity guard
REGULARITY_PROBES = (1.0, 1j, 1.0 + 1j, 10.0)


class DimensionError(ValueError):
    """Raised when a matrix block does not have the expected shape."""

    def __init__(self, block: str, expected, got):
        self.block = block
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(f"block {block}: expected shape {self.expected}, got {self.got}")


class IrregularPencilError(ValueError):
    pass


def _frozen(M, name: str, ndim: int = 2) -> np.ndarray:
    arr = np.array(M, dtype=float, copy=True)
    if arr.ndim == 0 and ndim == 2:
        arr = arr.reshape(1, 1)
    if arr.ndim != ndim:
        raise DimensionError(name, ("?",) * ndim, arr.shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"block {name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _check(name: str, M: np.ndarray, shape) -> None:
    if M.shape != tuple(shape):
        raise DimensionError(name, shape, M.shape)


def pencil_is_regular(E: np.ndarray, A: np.ndarray, probes=REGULARITY_PROBES) -> bool:
    """Return True if ``lam*E - A`` has full rank for at least one probe shift."""
    n = A.shape[0]
    if n == 0:
        return True
    for lam in probes:
        s = np.linalg.svd(lam * E - A, compute_uv=False)
        if s[-1] > s[0] * n * np.finfo(float).eps:
            return True
    return False


@dataclass(frozen=True)
class DescriptorPlant:
    """Open-loop descriptor system with disturbance/performance channels.

    ``E x' = A x + B1 w + B2 u``, ``z = C1 x + D11 w + D12 u``,
    ``y = C2 x + D21 w``.  ``D22`` must be zero.
    """

    E: np.ndarray
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: Optional[np.ndarray] = None
    check_regularity: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        for name in ("E", "A", "B1", "B2", "C1", "C2", "D11", "D12", "D21"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        A = self.A
        n = A.shape[0]
        m1 = self.B1.shape[1]
        m2 = self.B2.shape[1]
        p1 = self.C1.shape[0]
        p2 = self.C2.shape[0]
        _check("A", A, (n, n))
        _check("E", self.E, (n, n))
        _check("B1", self.B1, (n, m1))
        _check("B2", self.B2, (n, m2))
        _check("C1", self.C1, (p1, n))
        _check("C2", self.C2, (p2, n))
        _check("D11", self.D11, (p1, m1))
        _check("D12", self.D12, (p1, m2))
        _check("D21", self.D21, (p2, m1))
        D22 = np.zeros((p2, m2)) if self.D22 is None else _frozen(self.D22, "D22")
        _check("D22", D22, (p2, m2))
        if np.any(D22 != 0):
            raise ValueError("D22 must be exactly zero; plants with direct "
                             "control-to-measurement feed-through are not supported")
        D22 = np.zeros((p2, m2))
        D22.setflags(write=False)
        object.__setattr__(self, "D22", D22)
        if self.check_regularity and not pencil_is_regular(self.E, A):
            raise IrregularPencilError("pencil lam*E - A is singular at every probe shift")

    @property
    def dims(self) -> tuple:
        """``(n, m1, m2, p1, p2)``."""
        return (self.A.shape[0], self.B1.shape[1], self.B2.shape[1],
                self.C1.shape[0], self.C2.shape[0])

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def io_dims(self) -> tuple:
        """External dimensions ``(m1, m2, p1, p2)`` shared across a hierarchy."""
        return self.dims[1:]

    def matrices(self) -> dict:
        return {name: getattr(self, name) for name in
                ("E", "A", "B1", "B2", "C1", "C2", "D11", "D12", "D21", "D22")}


@dataclass(frozen=True)
class ControllerLayout:
    """Shape information needed to map a design vector to a controller."""

    nK: int
    m2: int
    p2: int
    dk_fixed_zero: bool = True

    def __post_init__(self):
        if min(self.nK, self.m2, self.p2) < 0:
            raise ValueError("layout dimensions must be nonnegative")

    @property
    def size(self) -> int:
        nK, m2, p2 = self.nK, self.m2, self.p2
        N = nK * nK + nK * m2 + p2 * nK
        if not self.dk_fixed_zero:
            N += p2 * m2
        return N

    @classmethod
    def for_plant(cls, plant: DescriptorPlant, nK: int, dk_fixed_zero: bool = True):
        return cls(nK, plant.dims[2], plant.dims[4], dk_fixed_zero)


@dataclass(frozen=True)
class Controller:
    """Fixed-order controller ``xK' = AK xK + BK y``, ``u = CK xK + DK y``."""

    AK: np.ndarray
    BK: np.ndarray
    CK: np.ndarray
    DK: np.ndarray
    dk_fixed_zero: bool = True

    def __post_init__(self):
        for name in ("AK", "BK", "CK", "DK"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        nK = self.AK.shape[0]
        p2 = self.BK.shape[1]
        m2 = self.CK.shape[0]
        _check("AK", self.AK, (nK, nK))
        _check("BK", self.BK, (nK, p2))
        _check("CK", self.CK, (m2, nK))
        _check("DK", self.DK, (m2, p2))
        if self.dk_fixed_zero and np.any(self.DK != 0):
            raise ValueError("DK must be zero when dk_fixed_zero is set")

    @property
    def layout(self) -> ControllerLayout:
        return ControllerLayout(self.AK.shape[0], self.CK.shape[0], self.BK.shape[1],
                                self.dk_fixed_zero)

    @property
    def nK(self) -> int:
        return self.AK.shape[0]

    @classmethod
    def zeros(cls, layout: ControllerLayout) -> "Controller":
        nK, m2, p2 = layout.nK, layout.m2, layout.p2
        return cls(np.zeros((nK, nK)), np.zeros((nK, p2)), np.zeros((m2, nK)),
                   np.zeros((m2, p2)), layout.dk_fixed_zero)

    @classmethod
    def random(cls, layout: ControllerLayout, rng: np.random.Generator,
               scale: float = 1.0) -> "Controller":
        x = scale * rng.standard_normal(layout.size)
        return unpack_controller(x, layout)


def pack_controller(k: Controller) -> np.ndarray:
    """Stack column-major ``vec`` of AK, BK, CK (and DK unless fixed to zero)."""
    parts = [k.AK.ravel(order="F"), k.BK.ravel(order="F"), k.CK.ravel(order="F")]
    if not k.dk_fixed_zero:
        parts.append(k.DK.ravel(order="F"))
    return np.concatenate(parts)


def unpack_controller(x, layout: ControllerLayout) -> Controller:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != layout.size:
        raise ValueError(f"design vector has length {x.size}, layout expects {layout.size}")
    nK, m2, p2 = layout.nK, layout.m2, layout.p2
    i = 0
    blocks = []
    for rows, cols in ((nK, nK), (nK, p2), (m2, nK)):
        blocks.append(x[i:i + rows * cols].reshape((rows, cols), order="F"))
        i += rows * cols
    if layout.dk_fixed_zero:
        DK = np.zeros((m2, p2))
    else:
        DK = x[i:i + m2 * p2].reshape((m2, p2), order="F")
    return Controller(*blocks, DK, layout.dk_fixed_zero)


@dataclass(frozen=True)
class ClosedLoop:
    """Closed-loop descriptor system ``(Ec, Ac, Bc, Cc, Dc)``.

    ``n`` is the plant order; the trailing ``nK`` states belong to the
    controller.
    """

    Ec: np.ndarray
    Ac: np.ndarray
    Bc: np.ndarray
    Cc: np.ndarray
    Dc: np.ndarray
    n: Optional[int] = None
    level: Optional[int] = None
    identity_E: bool = False

    def __post_init__(self):
        for name in ("Ec", "Ac", "Bc", "Cc", "Dc"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        N = self.Ac.shape[0]
        _check("Ec", self.Ec, (N, N))
        _check("Bc", self.Bc, (N, self.Bc.shape[1]))
        _check("Cc", self.Cc, (self.Cc.shape[0], N))
        _check("Dc", self.Dc, (self.Cc.shape[0], self.Bc.shape[1]))
        if self.n is None:
            object.__setattr__(self, "n", N)
        if not self.identity_E:
            object.__setattr__(self, "identity_E", bool(np.array_equal(self.Ec, np.eye(N))))

    @property
    def order(self) -> int:
        return self.Ac.shape[0]

    @property
    def nK(self) -> int:
        return self.order - self.n

    @classmethod
    def from_matrices(cls, A, B, C, D, E=None, level=None) -> "ClosedLoop":
        """Wrap a plain ``(E, A, B, C, D)`` system; handy for analysis-only use."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        E = np.eye(A.shape[0]) if E is None else E
        return cls(E, A, np.atleast_2d(B), np.atleast_2d(C), np.atleast_2d(D), level=level)


def assemble_closed_loop(plant: DescriptorPlant, k: Controller,
                         level: Optional[int] = None) -> ClosedLoop:
    """Close the loop between ``plant`` and ``k``."""
    n, m1, m2, p1, p2 = plant.dims
    if k.CK.shape[0] != m2:
        raise DimensionError("CK", (m2, k.nK), k.CK.shape)
    if k.BK.shape[1] != p2:
        raise DimensionError("BK", (k.nK, p2), k.BK.shape)
    nK = k.nK
    B2DK = plant.B2 @ k.DK
    D12DK = plant.D12 @ k.DK
    Ec = np.zeros((n + nK, n + nK))
    Ec[:n, :n] = plant.E
    Ec[n:, n:] = np.eye(nK)
    Ac = np.block([[plant.A + B2DK @ plant.C2, plant.B2 @ k.CK],
                   [k.BK @ plant.C2, k.AK]])
    Bc = np.vstack([plant.B1 + B2DK @ plant.D21, k.BK @ plant.D21])
    Cc = np.hstack([plant.C1 + D12DK @ plant.C2, plant.D12 @ k.CK])
    Dc = plant.D11 + D12DK @ plant.D21
    identity_E = bool(np.array_equal(plant.E, np.eye(n)))
    return ClosedLoop(Ec, Ac, Bc, Cc, Dc, n=n, level=level, identity_E=identity_E)


def make_normalized_lqg(E, A, B, C, **kwargs) -> DescriptorPlant:
    """Normalized LQG wiring: disturbances enter at the control and measurement.

    With ``B`` of size ``n x m`` and ``C`` of size ``p x n`` the result has
    ``m1 = m + p``, ``m2 = m``, ``p1 = p + m`` and ``p2 = p``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    E = np.atleast_2d(np.asarray(E, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    _check("A", A, (n, n))
    _check("E", E, (n, n))
    if B.shape[0] != n:
        raise DimensionError("B", (n, B.shape[1]), B.shape)
    if C.shape[1] != n:
        raise DimensionError("C", (C.shape[0], n), C.shape)
    m, p = B.shape[1], C.shape[0]
    return DescriptorPlant(
        E=E, A=A,
        B1=np.hstack([B, np.zeros((n, p))]),
        B2=B,
        C1=np.vstack([C, np.zeros((m, n))]),
        C2=C,
        D11=np.zeros((p + m, m + p)),
        D12=np.vstack([np.zeros((p, m)), np.eye(m)]),
        D21=np.hstack([np.zeros((p, m)), np.eye(p)]),
        **kwargs,
    )


def _leading_identity(rows: int, cols: int) -> np.ndarray:
    # first columns (rows >= cols) or first rows (rows < cols) of I_max(rows, cols)
    return np.eye(max(rows, cols))[:rows, :cols]


def make_general_plant(E, A, B1, B2, C2, **kwargs) -> DescriptorPlant:
    """Second benchmark wiring: ``C1 = C2``, identity-slice feed-throughs, ``D11 = 0``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    E = np.atleast_2d(np.asarray(E, dtype=float))
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    B2 = np.atleast_2d(np.asarray(B2, dtype=float))
    C2 = np.atleast_2d(np.asarray(C2, dtype=float))
    n = A.shape[0]
    _check("A", A, (n, n))
    _check("E", E, (n, n))
    for name, M in (("B1", B1), ("B2", B2)):
        if M.shape[0] != n:
            raise DimensionError(name, (n, M.shape[1]), M.shape)
    if C2.shape[1] != n:
        raise DimensionError("C2", (C2.shape[0], n), C2.shape)
    m1, m2, p2 = B1.shape[1], B2.shape[1], C2.shape[0]
    return DescriptorPlant(
        E=E, A=A, B1=B1, B2=B2, C1=C2, C2=C2,
        D11=np.zeros((p2, m1)),
        D12=_leading_identity(p2, m2),
        D21=_leading_identity(p2, m1),
        **kwargs,
    )


@dataclass(frozen=True)
class ModelHierarchy:
    """Plants ordered from cheapest (level 1) to the high-fidelity model (level L)."""

    plants: tuple

    def __init__(self, plants: Sequence[DescriptorPlant]):
        plants = tuple(plants)
        if not plants:
            raise ValueError("a hierarchy needs at least one level")
        io = plants[0].io_dims
        for lvl, plant in enumerate(plants[1:], start=2):
            if plant.io_dims != io:
                raise DimensionError(
                    f"external dims (m1, m2, p1, p2) of level 1 vs level {lvl}", io,
                    plant.io_dims)
        orders = [p.n for p in plants]
        if any(b < a for a, b in zip(orders, orders[1:])):
            raise ValueError(f"state dimensions must be nondecreasing with level, got {orders}")
        object.__setattr__(self, "plants", plants)

    def __len__(self) -> int:
        return len(self.plants)

    def __getitem__(self, level: int) -> DescriptorPlant:
        """1-based access: ``hier[1]`` is the coarsest plant."""
        if not 1 <= level <= len(self.plants):
            raise IndexError(f"level {level} outside 1..{len(self.plants)}")
        return self.plants[level - 1]

    @property
    def L(self) -> int:
        return len(self.plants)

    @property
    def io_dims(self) -> tuple:
        return self.plants[0].io_dims

    @property
    def top(self) -> DescriptorPlant:
        return self.plants[-1]

    def layout(self, nK: int, dk_fixed_zero: bool = True) -> ControllerLayout:
        m1, m2, p1, p2 = self.io_dims
        return ControllerLayout(nK, m2, p2, dk_fixed_zero)
