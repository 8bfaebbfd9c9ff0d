"""Minimum-norm point of the convex hull of finitely many vectors (Wolfe's method)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["HullProblem", "min_norm_hull"]


@dataclass(frozen=True)
class HullProblem:
    """Solution of ``min 1/2 ||G w||^2`` over the unit simplex.

    ``G`` holds the input vectors as columns; ``weights`` are aligned with the
    original (not deduplicated) columns.
    """

    G: np.ndarray
    weights: np.ndarray
    g_star: np.ndarray
    iterations: int = 0

    def certificate(self) -> float:
        """``min_i <g*, g_i - g*>``; nonnegative at the exact solution."""
        return float(np.min(self.G.T @ self.g_star) - self.g_star @ self.g_star)


def _affine_min(P: np.ndarray) -> np.ndarray:
    """Affine weights (sum one, any sign) of the min-norm point in the span of the columns."""
    k = P.shape[1]
    if k == 1:
        return np.ones(1)
    # parametrize by differences to the first column to stay well conditioned
    D = P[:, 1:] - P[:, :1]
    mu, *_ = np.linalg.lstsq(D, -P[:, 0], rcond=None)
    return np.concatenate([[1.0 - mu.sum()], mu])


def min_norm_hull(columns: Sequence[np.ndarray] | np.ndarray, tol: float = 1e-10,
                  max_iter: int = 1000) -> HullProblem:
    """Minimum-norm element of ``conv{g_1, ..., g_m}``.

    Parameters
    ----------
    columns : sequence of 1-D arrays, or 2-D array with the vectors as columns
    tol : float
        Stop once ``||x||^2 - min_i <x, g_i> <= tol * min(1 + ||x||^2, max_i ||g_i||^2)``.

    Returns
    -------
    HullProblem
    """
    if isinstance(columns, np.ndarray) and columns.ndim == 2:
        G = np.array(columns, dtype=float)
    else:
        G = np.column_stack([np.asarray(c, dtype=float).ravel() for c in columns])
    if G.shape[1] == 0:
        raise ValueError("need at least one vector")
    if not np.all(np.isfinite(G)):
        raise ValueError("non-finite entries in gradient set")

    # collapse near-duplicate columns
    scale = max(1.0, float(np.abs(G).max()))
    keep: list[int] = []
    owner = np.empty(G.shape[1], dtype=int)
    for j in range(G.shape[1]):
        for i, kj in enumerate(keep):
            if np.max(np.abs(G[:, j] - G[:, kj])) <= 1e-14 * scale:
                owner[j] = i
                break
        else:
            owner[j] = len(keep)
            keep.append(j)
    P = G[:, keep]
    norms2 = np.einsum("ij,ij->j", P, P)
    max2 = max(float(norms2.max()), 1e-300)

    # Wolfe's algorithm: S is the corral, w the convex weights on it
    j0 = int(np.argmin(norms2))
    S = [j0]
    w = np.ones(1)
    x = P[:, j0].copy()
    it = 0
    while it < max_iter:
        it += 1
        dots = P.T @ x
        j = int(np.argmin(dots))
        xx = x @ x
        if xx - dots[j] <= tol * min(1.0 + xx, max2) or j in S:
            break
        S.append(j)
        w = np.append(w, 0.0)
        # minor cycles
        while True:
            lam = _affine_min(P[:, S])
            if np.all(lam > 1e-14):
                w = lam
                break
            idx = np.flatnonzero(lam <= 1e-14)
            den = w[idx] - lam[idx]
            ratios = np.where(den > 0, w[idx] / np.where(den > 0, den, 1.0), 0.0)
            r = int(np.argmin(ratios))
            theta = min(max(float(ratios[r]), 0.0), 1.0)
            w = w + theta * (lam - w)
            drop = w <= 1e-14
            drop[idx[r]] = True
            S = [s for s, d in zip(S, drop) if not d]
            w = w[~drop]
            if not S:  # numerical safeguard, cannot happen in exact arithmetic
                S, w = [j], np.ones(1)
            w = w / w.sum()
            if len(S) == 1:
                break
        x = P[:, S] @ w

    weights_unique = np.zeros(P.shape[1])
    weights_unique[S] = w
    weights = np.zeros(G.shape[1])
    # credit duplicated columns to their first occurrence
    for j in range(G.shape[1]):
        if keep[owner[j]] == j:
            weights[j] = weights_unique[owner[j]]
    return HullProblem(G, weights, G @ weights, it)
