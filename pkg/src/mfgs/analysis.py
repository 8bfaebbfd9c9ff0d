"""Spectral abscissa, frequency response and L-infinity / H-infinity norms.

Everything works on dense :class:`~mfgs.lti.ClosedLoop` descriptor systems.
Two peak searches are available for the L-infinity norm:

``"levelset"``
    Level-set iteration in the style of Boyd--Balakrishnan / Bruinsma--Steinbuch:
    imaginary-axis eigenvalues of a Hamiltonian matrix (or of an even pencil for
    descriptor systems) locate the frequencies where the largest singular value
    crosses a trial level.  Terminates with a certificate that no frequency
    exceeds ``(1 + 2 tol)`` times the returned value.
``"grid"``
    Dense frequency scan (log grid plus all pole frequencies) with local
    refinement of the best peaks.  Much cheaper for larger systems because it
    reuses the eigendecomposition computed for the stability test, but not
    certified.

Both polish the final peak frequency to full precision by root-finding on the
derivative of the largest singular value, which the gradient formulas rely on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from .lti import ClosedLoop

__all__ = [
    "SingularPencilError",
    "ImproperSystemError",
    "SpectralError",
    "SpectralResult",
    "NormResult",
    "PencilEig",
    "transfer_eval",
    "spectral_abscissa",
    "linf_norm",
    "hinf_norm",
    "linf_oracle_grid",
    "sigma_max",
]

EPS = np.finfo(float).eps
GRID_POINTS = 2000
N_REFINE = 10
ZOOM_POINTS = 33


class SingularPencilError(ArithmeticError):
    def __init__(self, s):
        self.s = s
        super().__init__(f"s*Ec - Ac is singular at s = {s}")


class ImproperSystemError(ArithmeticError):
    pass


class SpectralError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SpectralResult:
    """Rightmost finite eigenvalue of ``(Ac, Ec)`` and its eigenvectors.

    ``left_vec`` is scaled so that ``left_vec^H Ec right_vec = 1``.  ``gap`` is
    the distance in real part to the next eigenvalue in the closed upper half
    plane, so a complex-conjugate partner does not count as a competitor.
    """

    alpha: float
    lambda_peak: complex
    right_vec: Optional[np.ndarray] = None
    left_vec: Optional[np.ndarray] = None
    gap: float = math.inf


@dataclass(frozen=True)
class NormResult:
    value: float
    omega_peak: float = math.nan
    u_peak: Optional[np.ndarray] = None
    v_peak: Optional[np.ndarray] = None
    sv_gap: float = math.nan
    certified_tol: float = math.nan
    alpha: float = math.nan
    method: str = ""

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    @property
    def unstable(self) -> bool:
        return not self.alpha < 0


def _batched_sigma_max(H: np.ndarray) -> np.ndarray:
    """Largest singular values of a stack via the smaller Gram matrix (relative accuracy ~eps)."""
    Ht = H.conj().transpose(0, 2, 1)
    M = Ht @ H if H.shape[2] <= H.shape[1] else H @ Ht
    return np.sqrt(np.maximum(np.linalg.eigvalsh(M)[:, -1], 0.0))


def sigma_max(G: np.ndarray):
    """Largest singular value of ``G``, vectors with ``G v = s u``, and the relative gap."""
    U, s, Vh = np.linalg.svd(G)
    if s.size == 0:
        return 0.0, np.zeros(G.shape[0], complex), np.zeros(G.shape[1], complex), 1.0
    gap = 1.0 if s.size == 1 or s[0] == 0 else (s[0] - s[1]) / s[0]
    return float(s[0]), U[:, 0], Vh[0].conj(), float(gap)


def transfer_eval(cl: ClosedLoop, s: complex) -> np.ndarray:
    """``Cc (s Ec - Ac)^{-1} Bc + Dc`` via one LU factorization."""
    if cl.order == 0:
        return cl.Dc.astype(complex)
    Z = s * cl.Ec - cl.Ac
    lu, piv = sla.lu_factor(Z, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= cl.order * EPS * max(d.max(), np.abs(Z).max()):
        raise SingularPencilError(s)
    X = sla.lu_solve((lu, piv), cl.Bc.astype(complex), check_finite=False)
    return cl.Cc @ X + cl.Dc


def _infinite_threshold(cl: ClosedLoop) -> float:
    return cl.order * EPS * (np.linalg.norm(cl.Ac) + np.linalg.norm(cl.Ec))


@dataclass
class PencilEig:
    """Finite eigenvalues of ``(Ac, Ec)`` with optional right/left eigenvectors."""

    values: np.ndarray
    right: Optional[np.ndarray] = None
    left: Optional[np.ndarray] = None
    n_infinite: int = 0

    @classmethod
    def compute(cls, cl: ClosedLoop, right: bool = False, left: bool = False) -> "PencilEig":
        if cl.order == 0:
            empty = np.zeros((0, 0), complex)
            return cls(np.zeros(0, complex), empty if right else None, empty if left else None)
        if cl.identity_E:
            if left:
                lam, vl, vr = sla.eig(cl.Ac, left=True, right=True, check_finite=False)
            elif right:
                lam, vr = np.linalg.eig(cl.Ac)
                vl = None
            else:
                lam, vl, vr = np.linalg.eigvals(cl.Ac), None, None
            return cls(lam.astype(complex), vr if right else None, vl)
        out = sla.eig(cl.Ac, cl.Ec, left=left, right=right, homogeneous_eigvals=True,
                      check_finite=False)
        if left or right:
            ab = out[0]
        else:
            ab = out
        alpha, beta = ab[0], ab[1]
        finite = np.abs(beta) > _infinite_threshold(cl)
        lam = alpha[finite] / beta[finite]
        vl = vr = None
        k = 1
        if left:
            vl = out[k][:, finite]
            k += 1
        if right:
            vr = out[k][:, finite]
        return cls(lam, vr, vl, int(np.count_nonzero(~finite)))

    @property
    def alpha(self) -> float:
        if self.values.size == 0:
            return -math.inf
        return float(self.values.real.max())


def spectral_abscissa(cl: ClosedLoop, vectors: bool = True, rtol: float = 1e-10) -> SpectralResult:
    """Rightmost finite eigenvalue of the pencil ``s Ec - Ac``.

    Pairs with ``|beta| <= n eps (||Ac||_F + ||Ec||_F)`` are treated as
    infinite eigenvalues and ignored.
    """
    eig = PencilEig.compute(cl, right=vectors, left=vectors)
    lam = eig.values
    if lam.size == 0:
        if cl.order == 0:
            return SpectralResult(-math.inf, complex(-math.inf))
        raise SpectralError("pencil has no finite eigenvalues (nilpotent-only pencil)")
    re = lam.real
    amax = re.max()
    # among (near) ties pick the solver's first eigenvalue in the closed upper half plane
    tie = np.flatnonzero(re >= amax - 1e-14 * max(1.0, abs(amax)))
    upper = [i for i in tie if lam[i].imag >= 0]
    idx = upper[0] if upper else tie[0]
    lam_peak = lam[idx]
    others = np.delete(lam, idx)
    partner = np.abs(others - np.conj(lam_peak)) <= 1e-10 * max(1.0, abs(lam_peak))
    if lam_peak.imag != 0 and partner.any():
        others = np.delete(others, np.flatnonzero(partner)[0])
    gap = float(amax - others.real.max()) if others.size else math.inf
    if not vectors:
        return SpectralResult(float(amax), complex(lam_peak), gap=gap)
    v = eig.right[:, idx]
    w = eig.left[:, idx]
    v = v / np.linalg.norm(v)
    Ev = cl.Ec @ v
    c = np.vdot(w, Ev)
    if abs(c) <= rtol * np.linalg.norm(w) * np.linalg.norm(Ev):
        raise SpectralError("rightmost eigenvalue is defective: w^H Ec v is numerically zero")
    w = w / np.conj(c)
    return SpectralResult(float(amax), complex(lam_peak), v, w, gap)


class _Evaluator:
    """Evaluates the largest singular value of ``G(i w)`` and its derivative.

    Uses the pole/residue form when an eigendecomposition with a usable
    eigenvector basis is available, otherwise dense solves.
    """

    def __init__(self, cl: ClosedLoop, eig: Optional[PencilEig] = None):
        self.cl = cl
        self.modal = False
        if eig is not None and eig.right is not None and eig.n_infinite == 0 and cl.order > 0:
            V = eig.right
            EV = V if cl.identity_E else cl.Ec @ V
            try:
                lu = sla.lu_factor(EV, check_finite=False)
                d = np.abs(np.diag(lu[0]))
                if d.min() > 1e-12 * d.max():
                    self.lam = eig.values
                    self.CV = cl.Cc @ V
                    self.WB = sla.lu_solve(lu, cl.Bc.astype(complex), check_finite=False)
                    self.modal = True
            except (ValueError, np.linalg.LinAlgError):
                self.modal = False

    def response(self, omegas: np.ndarray) -> np.ndarray:
        """Stack of ``G(i w)`` for an array of frequencies, shape ``(k, p1, m1)``."""
        cl = self.cl
        omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
        if cl.order == 0:
            return np.broadcast_to(cl.Dc.astype(complex), (omegas.size,) + cl.Dc.shape).copy()
        if self.modal:
            out = np.empty((omegas.size,) + cl.Dc.shape, complex)
            chunk = max(1, 2_000_000 // max(1, cl.order * cl.Cc.shape[0]))
            for a in range(0, omegas.size, chunk):
                w = omegas[a:a + chunk]
                d = 1.0 / (1j * w[:, None] - self.lam[None, :])
                out[a:a + chunk] = (self.CV[None, :, :] * d[:, None, :]) @ self.WB + cl.Dc
            return out
        return _direct_response(cl, omegas)

    def sigma(self, omega: float) -> float:
        return float(np.linalg.svd(self.response(omega)[0], compute_uv=False)[0]) \
            if min(self.cl.Dc.shape) else 0.0

    def sigmas(self, omegas: np.ndarray) -> np.ndarray:
        H = self.response(omegas)
        if min(H.shape[1:]) == 0:
            return np.zeros(H.shape[0])
        if H.shape[1] == 1 or H.shape[2] == 1:
            return np.linalg.norm(H.reshape(H.shape[0], -1), axis=1)
        return _batched_sigma_max(H)

    def dsigma(self, omega: float) -> float:
        """Derivative of the largest singular value with respect to ``omega``."""
        cl = self.cl
        if cl.order == 0:
            return 0.0
        G = self.response(omega)[0]
        _, u, v, _ = sigma_max(G)
        if self.modal:
            d = 1.0 / (1j * omega - self.lam)
            dG = -1j * (self.CV * (d * d)[None, :]) @ self.WB
        else:
            Z = 1j * omega * cl.Ec - cl.Ac
            lu = sla.lu_factor(Z, check_finite=False)
            X = sla.lu_solve(lu, cl.Bc.astype(complex), check_finite=False)
            dG = -1j * cl.Cc @ sla.lu_solve(lu, cl.Ec @ X, check_finite=False)
        return float(np.real(np.vdot(u, dG @ v)))


def _direct_response(cl: ClosedLoop, omegas: np.ndarray) -> np.ndarray:
    n = cl.order
    out = np.empty((omegas.size,) + cl.Dc.shape, complex)
    chunk = max(1, 4_000_000 // max(1, n * n))
    B = cl.Bc.astype(complex)
    for a in range(0, omegas.size, chunk):
        w = omegas[a:a + chunk]
        Z = 1j * w[:, None, None] * cl.Ec[None] - cl.Ac[None]
        X = np.linalg.solve(Z, np.broadcast_to(B, (w.size,) + B.shape))
        out[a:a + chunk] = cl.Cc @ X + cl.Dc
    return out


def _polish(ev: _Evaluator, lo: float, hi: float, w0: float, s0: float):
    """Maximize the largest singular value on ``[lo, hi]`` starting from ``w0``.

    Batched zoom search down to a relative width of 1e-6, then a root of the
    frequency derivative on the final bracket.
    """
    best_w, best_s = w0, s0
    if not hi > lo:
        return best_w, best_s
    a, b = lo, hi
    for _ in range(60):
        ws = np.linspace(a, b, ZOOM_POINTS)
        ss = ev.sigmas(ws)
        j = int(np.argmax(ss))
        if ss[j] > best_s:
            best_w, best_s = float(ws[j]), float(ss[j])
        half = (b - a) / (ZOOM_POINTS - 1)
        a, b = max(lo, best_w - half), min(hi, best_w + half)
        if b - a <= 1e-6 * max(abs(best_w), 1e-300):
            break
    if best_w <= 0.0 or not b > a:
        return best_w, best_s
    da, db = ev.dsigma(a), ev.dsigma(b)
    if not (da > 0.0 > db):
        return best_w, best_s
    try:
        root = brentq(ev.dsigma, a, b, xtol=1e-15 * b, rtol=4 * EPS, maxiter=100)
    except ValueError:
        return best_w, best_s
    s_root = ev.sigma(root)
    if s_root >= best_s:
        return float(root), s_root
    return best_w, best_s


def _candidate_frequencies(lam: np.ndarray, n_grid: int) -> np.ndarray:
    mags = np.abs(lam)
    mags = mags[np.isfinite(mags) & (mags > 0)]
    if mags.size:
        lo, hi = mags.min() * 1e-3, mags.max() * 1e3
    else:
        lo, hi = 1e-3, 1e3
    grid = np.logspace(np.log10(lo), np.log10(hi), n_grid) if n_grid else np.zeros(0)
    poles = np.concatenate([np.abs(lam.imag), mags]) if lam.size else np.zeros(0)
    w = np.concatenate([[0.0], grid, poles])
    w = w[np.isfinite(w)]
    return np.unique(w)


def _limit_value(cl: ClosedLoop, ev: _Evaluator, eig: PencilEig):
    """Value of the largest singular value as ``omega -> inf`` and the frequency used for it."""
    scale = max(1.0, float(np.abs(eig.values).max())) if eig.values.size else 1.0
    probe = 1e4 * scale
    if eig.n_infinite == 0:
        s, u, v, gap = sigma_max(cl.Dc.astype(complex))
        return s, math.inf, probe
    return ev.sigma(100 * probe), 100 * probe, probe


def _check_proper(cl: ClosedLoop, ev: _Evaluator, probe: float, interior: float) -> None:
    s = [sigma_max(transfer_eval(cl, 1j * probe * 10.0 ** k))[0] for k in range(3)]
    if s[2] > s[1] > s[0] and s[2] > (1 + 1e-3) * s[0] and s[2] >= interior:
        raise ImproperSystemError(
            "transfer function keeps growing at high frequency (improper or polynomial part)")


def _imag_crossings(cl: ClosedLoop, gamma: float, std: Optional[tuple]) -> Optional[np.ndarray]:
    """Nonnegative frequencies where some singular value of ``G(i w)`` equals ``gamma``.

    Returns ``None`` if the eigenvalue problem could not be solved.
    """
    D = cl.Dc
    p, m = D.shape
    try:
        if std is not None:
            A, B, C = std
            Gam = np.block([[-gamma * np.eye(p), D], [D.T, -gamma * np.eye(m)]])
            P = np.linalg.inv(Gam)
            P11, P12, P21, P22 = P[:p, :p], P[:p, p:], P[p:, :p], P[p:, p:]
            H = np.block([[A - B @ P21 @ C, -B @ P22 @ B.T],
                          [C.T @ P11 @ C, -A.T + C.T @ P12 @ B.T]])
            lam = np.linalg.eigvals(H)
            scale = np.abs(H).sum(axis=0).max()
        else:
            n = cl.order
            A, E, B, C = cl.Ac, cl.Ec, cl.Bc, cl.Cc
            Z = np.zeros
            M = np.block([
                [A, Z((n, n)), Z((n, p)), B],
                [Z((n, n)), A.T, C.T, Z((n, m))],
                [C, Z((p, n)), -gamma * np.eye(p), D],
                [Z((m, n)), B.T, D.T, -gamma * np.eye(m)],
            ])
            Nm = sla.block_diag(E, -E.T, Z((p, p)), Z((m, m)))
            ab = sla.eigvals(M, Nm, homogeneous_eigvals=True, check_finite=False)
            fin = np.abs(ab[1]) > M.shape[0] * EPS * (np.linalg.norm(M) + np.linalg.norm(Nm))
            lam = ab[0][fin] / ab[1][fin]
            scale = np.abs(M).sum(axis=0).max()
    except (np.linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(lam)):
        lam = lam[np.isfinite(lam)]
    on_axis = np.abs(lam.real) <= 100 * EPS * scale + 1e-8 * np.abs(lam)
    w = np.abs(lam[on_axis].imag)
    return np.unique(w)


def linf_norm(cl: ClosedLoop, tol: float = 1e-8, method: str = "levelset",
              eig: Optional[PencilEig] = None, max_iter: int = 50,
              grid_points: int = GRID_POINTS) -> NormResult:
    """Supremum over ``omega >= 0`` of the largest singular value of ``G(i omega)``.

    Parameters
    ----------
    cl : ClosedLoop
    tol : float
        Relative tolerance of the level-set certificate.
    method : {"levelset", "grid"}
    eig : PencilEig, optional
        Precomputed finite eigenvalues (and right eigenvectors) of ``(Ac, Ec)``.
    grid_points : int
        Log-spaced frequencies of the ``grid`` search (pole frequencies are
        always added).

    Returns
    -------
    NormResult
        ``alpha`` is filled in and ``unstable`` is set when ``alpha >= 0``; the
        value on the imaginary axis is still returned in that case.  Among
        several maximizers the smallest frequency is reported.
    """
    if method not in ("levelset", "grid"):
        raise ValueError(f"unknown method {method!r}")
    if eig is None or (eig.right is None and method == "grid"):
        eig = PencilEig.compute(cl, right=True)
    alpha = eig.alpha
    ev = _Evaluator(cl, eig)
    if cl.order == 0:
        s, u, v, gap = sigma_max(cl.Dc.astype(complex))
        return NormResult(s, 0.0, u, v, gap, 0.0, alpha, method)

    n_grid = grid_points if method == "grid" else (200 if ev.modal else 0)
    if method == "levelset" and not ev.modal:
        n_grid = 20
    lam = eig.values
    if method == "levelset" and lam.size > 40 and not ev.modal:
        # keep only the least damped poles to bound the number of dense solves
        damp = np.abs(lam.real) / np.maximum(np.abs(lam), 1e-300)
        lam = lam[np.argsort(damp)[:40]]
    cand = _candidate_frequencies(lam, n_grid)
    vals = ev.sigmas(cand)
    lim_val, lim_w, probe = _limit_value(cl, ev, eig)

    order = np.argsort(-vals, kind="stable")
    if method == "grid":
        # local maxima on the sorted grid, best few refined
        is_max = np.ones(cand.size, bool)
        is_max[1:] &= vals[1:] >= vals[:-1]
        is_max[:-1] &= vals[:-1] >= vals[1:]
        idxs = [i for i in order if is_max[i]][:N_REFINE]
    else:
        idxs = [int(order[0])]
    best_w, best_s = float(cand[order[0]]), float(vals[order[0]])
    for i in idxs:
        lo = cand[i - 1] if i > 0 else 0.0
        hi = cand[i + 1] if i + 1 < cand.size else cand[i] * 10
        w, s = _polish(ev, lo, hi, float(cand[i]), float(vals[i]))
        if s > best_s:
            best_w, best_s = w, s
    # smallest maximizer on ties
    ties = np.flatnonzero(vals >= best_s)
    if ties.size and cand[ties[0]] < best_w and vals[ties[0]] == best_s:
        best_w = float(cand[ties[0]])

    certified = math.nan
    if method == "levelset":
        std = None
        if cl.identity_E:
            std = (cl.Ac, cl.Bc, cl.Cc)
        elif eig.n_infinite == 0:
            try:
                lu = sla.lu_factor(cl.Ec, check_finite=False)
                d = np.abs(np.diag(lu[0]))
                if d.min() > 1e-10 * d.max():
                    std = (sla.lu_solve(lu, cl.Ac), sla.lu_solve(lu, cl.Bc), cl.Cc)
            except (ValueError, np.linalg.LinAlgError):
                std = None
        gamma_lb = max(best_s, lim_val)
        for _ in range(max_iter):
            gamma = (1 + 2 * tol) * gamma_lb
            cross = _imag_crossings(cl, gamma, std)
            if cross is None:
                # eigenvalue problem unusable: fall back to the refined grid search
                return linf_norm(cl, tol, "grid", eig, grid_points=grid_points)
            if cross.size == 0:
                certified = tol
                break
            pts = np.concatenate([[0.0], cross])
            mids = 0.5 * (pts[1:] + pts[:-1])
            mvals = ev.sigmas(mids)
            j = int(np.argmax(mvals))
            if mvals[j] <= gamma_lb * (1 + 0.1 * tol):
                certified = tol  # numerically spurious crossings only
                break
            w, s = _polish(ev, pts[j], pts[j + 1], float(mids[j]), float(mvals[j]))
            if s > best_s:
                best_w, best_s = w, s
            gamma_lb = max(best_s, lim_val)

    if lim_val > best_s * (1 + 4 * EPS):
        best_w, best_s = lim_w, lim_val
    if eig.n_infinite:
        _check_proper(cl, ev, probe, best_s)

    if math.isinf(best_w):
        s, u, v, gap = sigma_max(cl.Dc.astype(complex))
    else:
        try:
            G = transfer_eval(cl, 1j * best_w)
        except SingularPencilError:
            return NormResult(math.inf, best_w, None, None, math.nan, certified, alpha, method)
        s, u, v, gap = sigma_max(G)
        if ev.modal and abs(s - best_s) > 1e-6 * max(s, 1e-300):
            # eigenvector basis too ill-conditioned for the modal evaluator
            return linf_norm(cl, tol, method, PencilEig(eig.values, None, None, eig.n_infinite),
                             grid_points=grid_points)
    return NormResult(s, best_w, u, v, gap, certified, alpha, method)


def hinf_norm(cl: ClosedLoop, tol: float = 1e-8, method: str = "levelset",
              grid_points: int = GRID_POINTS) -> NormResult:
    """H-infinity norm: the L-infinity norm if the pencil is stable, ``inf`` otherwise."""
    eig = PencilEig.compute(cl, right=(method == "grid") or cl.order <= 400)
    if eig.values.size == 0 and cl.order > 0:
        raise SpectralError("pencil has no finite eigenvalues (nilpotent-only pencil)")
    alpha = eig.alpha
    if not alpha < 0:
        return NormResult(math.inf, alpha=alpha, method=method)
    return linf_norm(cl, tol, method, eig, grid_points=grid_points)


def _schur_response(cl: ClosedLoop, omegas: np.ndarray) -> np.ndarray:
    """``G(i omega)`` on a frequency stack via one complex QZ and batched back substitution."""
    S, T, Q, Z = sla.qz(cl.Ec.astype(complex), cl.Ac.astype(complex), output="complex")
    Y = Q.conj().T @ cl.Bc.astype(complex)
    CZ = cl.Cc @ Z
    n = cl.order
    jw = 1j * omegas
    # frequency runs along the last (contiguous) axis
    X = np.empty((n, Y.shape[1], omegas.size), complex)
    for i in range(n - 1, -1, -1):
        rhs = np.repeat(Y[i][:, None], omegas.size, axis=1)
        for j in range(i + 1, n):
            rhs -= (S[i, j] * jw - T[i, j]) * X[j]
        X[i] = rhs / (jw * S[i, i] - T[i, i])
    return np.einsum("pj,jmw->wpm", CZ, X) + cl.Dc


def linf_oracle_grid(cl: ClosedLoop, grid_size: int = 100_000) -> float:
    """Brute-force lower bound: max over ``omega = 0`` and a log grid on ``[1e-8, 1e8]``."""
    omegas = np.concatenate([[0.0], np.logspace(-8, 8, int(grid_size))])
    if min(cl.Dc.shape) == 0:
        return 0.0
    if cl.order == 0:
        return float(np.linalg.norm(cl.Dc, 2))
    best = 0.0
    chunk = 20_000
    with np.errstate(divide="ignore", invalid="ignore"):
        for a in range(0, omegas.size, chunk):
            H = _schur_response(cl, omegas[a:a + chunk])
            s = _batched_sigma_max(H)
            best = max(best, float(np.nanmax(s)) if np.any(np.isfinite(s)) else math.inf)
    return best
