"""Cached solver for the per-block ridge system (X'X + I) u = v.

When a block has fewer rows than columns the n_m x n_m matrix I + XX' is
factored instead and applied through the Woodbury identity

    (X'X + I)^{-1} = I - X' (I + XX')^{-1} X,

so the factorization cost is min(n_m, p)^3 and is paid once per block.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import DataError


class RidgeMode(str, Enum):
    DIRECT_P = "direct"
    WOODBURY_N = "woodbury"


@dataclass(frozen=True)
class RidgeFactor:
    mode: RidgeMode
    chol: tuple
    X: np.ndarray

    @property
    def p(self) -> int:
        return self.X.shape[1]


def ridge_factor(Xm) -> RidgeFactor:
    Xm = np.asarray(Xm, dtype=float)
    if Xm.ndim != 2 or min(Xm.shape) < 1:
        raise DataError(f"block matrix must be 2-d and nonempty, got shape {Xm.shape}")
    if not np.all(np.isfinite(Xm)):
        raise DataError("non-finite entries in block matrix")
    n_m, p = Xm.shape
    if n_m < p:
        K = Xm @ Xm.T
        K[np.diag_indices_from(K)] += 1.0
        return RidgeFactor(RidgeMode.WOODBURY_N, cho_factor(K, lower=True), Xm)
    K = Xm.T @ Xm
    K[np.diag_indices_from(K)] += 1.0
    return RidgeFactor(RidgeMode.DIRECT_P, cho_factor(K, lower=True), Xm)


def ridge_apply(f: RidgeFactor, v) -> np.ndarray:
    """Return u solving (X'X + I) u = v."""
    v = np.asarray(v, dtype=float)
    if v.shape != (f.p,):
        raise DataError(f"expected vector of length {f.p}, got shape {v.shape}")
    if f.mode is RidgeMode.DIRECT_P:
        return cho_solve(f.chol, v)
    X = f.X
    return v - X.T @ cho_solve(f.chol, X @ v)
