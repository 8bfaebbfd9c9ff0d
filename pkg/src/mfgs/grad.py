"""Gradients of the H-infinity objective and the spectral-abscissa constraint.

Both closed-loop gradients are rank one, so the chain rule through the
closed-loop assembly collapses to outer products of short vectors:

* H-infinity norm at peak ``omega`` with ``G(i omega) v = sigma u``:
  ``a = Z^{-H} Cc^T u`` and ``c = Z^{-1} Bc v`` with ``Z = i omega Ec - Ac``,
  giving ``dAc = a c^H``, ``dBc = a v^H``, ``dCc = u c^H``, ``dDc = u v^H``.
* spectral abscissa: ``dAc = w v^H`` with ``w^H Ec v = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .analysis import NormResult, SpectralResult, hinf_norm, spectral_abscissa
from .lti import ClosedLoop, Controller, DescriptorPlant, assemble_closed_loop

__all__ = [
    "GradientError",
    "ControllerGradient",
    "grad_hinf",
    "grad_specabs",
    "fd_gradient",
]


class GradientError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ControllerGradient:
    dAK: np.ndarray
    dBK: np.ndarray
    dCK: np.ndarray
    dDK: np.ndarray
    dk_fixed_zero: bool = True

    @property
    def as_vector(self) -> np.ndarray:
        parts = [self.dAK.ravel(order="F"), self.dBK.ravel(order="F"),
                 self.dCK.ravel(order="F")]
        if not self.dk_fixed_zero:
            parts.append(self.dDK.ravel(order="F"))
        return np.concatenate(parts)


def _chain(plant: DescriptorPlant, k: Controller, a, c, u, v) -> ControllerGradient:
    """Map ``dAc = a c^H``, ``dBc = a v^H``, ``dCc = u c^H``, ``dDc = u v^H`` to controller blocks.

    Any of ``u``/``v`` may be ``None`` (spectral abscissa has no ``B``/``C`` terms).
    """
    n = plant.n
    a1, a2 = a[:n], a[n:]
    c1, c2 = c[:n], c[n:]
    left = plant.B2.T @ a1          # m2
    right = plant.C2 @ c1           # p2
    if u is not None:
        left = left + plant.D12.T @ u
        right = right + plant.D21 @ v
    dAK = np.real(np.outer(a2, c2.conj()))
    dBK = np.real(np.outer(a2, right.conj()))
    dCK = np.real(np.outer(left, c2.conj()))
    dDK = np.real(np.outer(left, right.conj()))
    return ControllerGradient(dAK, dBK, dCK, dDK, k.dk_fixed_zero)


def grad_hinf(plant: DescriptorPlant, k: Controller, norm: Optional[NormResult] = None,
              cl: Optional[ClosedLoop] = None, **norm_kwargs) -> ControllerGradient:
    """Gradient of ``||G_c||_Hinf`` with respect to the controller matrices.

    Assumes the peak is attained at a single frequency with a simple largest
    singular value; ties are broken by whatever the norm computation returned.
    """
    if cl is None:
        cl = assemble_closed_loop(plant, k)
    if norm is None:
        norm = hinf_norm(cl, **norm_kwargs)
    if not math.isfinite(norm.value):
        raise GradientError("gradient undefined for unstable loop (infinite H-infinity norm)")
    u = np.asarray(norm.u_peak, dtype=complex)
    v = np.asarray(norm.v_peak, dtype=complex)
    N = cl.order
    if math.isinf(norm.omega_peak) or N == 0:
        zero = np.zeros(N, complex)
        return _chain(plant, k, zero, zero, u, v)
    Z = 1j * norm.omega_peak * cl.Ec - cl.Ac
    lu, piv = sla.lu_factor(Z, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= N * np.finfo(float).eps * d.max():
        raise GradientError(f"i*omega*Ec - Ac is singular at the peak frequency {norm.omega_peak}")
    a = sla.lu_solve((lu, piv), cl.Cc.T @ u, trans=2, check_finite=False)
    c = sla.lu_solve((lu, piv), cl.Bc @ v, check_finite=False)
    return _chain(plant, k, a, c, u, v)


def grad_specabs(plant: DescriptorPlant, k: Controller, spec: Optional[SpectralResult] = None,
                 cl: Optional[ClosedLoop] = None) -> ControllerGradient:
    """Gradient of the spectral abscissa of ``(Ac, Ec)`` with respect to the controller."""
    if cl is None:
        cl = assemble_closed_loop(plant, k)
    if spec is None or spec.right_vec is None:
        spec = spectral_abscissa(cl, vectors=True)
    return _chain(plant, k, np.asarray(spec.left_vec), np.asarray(spec.right_vec), None, None)


def fd_gradient(objective: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    """Central finite differences with per-coordinate step ``step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = objective(xp)
        fm = objective(xm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"objective is not finite at the probes of coordinate {i}")
        g[i] = (fp - fm) / (xp[i] - xm[i])
    return g
