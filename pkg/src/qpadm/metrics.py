"""Evaluation statistics for fitted coefficient vectors."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DataError, ParameterError
from .data import HETERO_INDEX, TRUE_SUPPORT

ZERO_THRESHOLD = 1e-6


def absolute_error(beta_hat, beta_true, norm: str = "l1") -> float:
    """Distance between estimate and truth; ``norm`` is "l1" (default) or "l2"."""
    b = np.asarray(beta_hat, dtype=float).ravel()
    t = np.asarray(beta_true, dtype=float).ravel()
    if b.shape != t.shape:
        raise DataError(f"length mismatch: {b.shape[0]} vs {t.shape[0]}")
    if norm == "l1":
        return float(np.abs(b - t).sum())
    if norm == "l2":
        return float(np.linalg.norm(b - t))
    raise ParameterError(f"unknown norm {norm!r}")


def classification_accuracy(beta_hat, raw_X, raw_y) -> float:
    """Percent of labels reproduced by sign(x'beta), with sign(0) = +1."""
    y = np.asarray(raw_y, dtype=float).ravel()
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("labels must be -1 or +1")
    score = np.asarray(raw_X, dtype=float) @ np.asarray(beta_hat, dtype=float)
    pred = np.where(score >= 0, 1.0, -1.0)
    return float(100.0 * np.mean(pred == y))


def support_metrics(beta_hat, p: Optional[int] = None, zero_threshold: float = ZERO_THRESHOLD,
                    support: Sequence[int] = TRUE_SUPPORT, hetero_index: int = HETERO_INDEX):
    """Return (p1, p2, nonzero, sparsity) for a coefficient vector.

    ``support`` and ``hetero_index`` are 1-based; p1 flags the heteroscedastic
    covariate and p2 requires every covariate in ``support``.
    """
    if not zero_threshold > 0:
        raise ParameterError("zero_threshold must be positive")
    b = np.asarray(beta_hat, dtype=float).ravel()
    if p is None:
        p = b.shape[0]
    if b.shape[0] != p:
        raise DataError(f"expected {p} coefficients, got {b.shape[0]}")
    sel = np.abs(b) > zero_threshold
    p1 = int(p >= hetero_index and sel[hetero_index - 1])
    p2 = int(all(j <= p and sel[j - 1] for j in support))
    nonzero = int(sel.sum())
    sparsity = 100.0 * (p - nonzero) / p
    return p1, p2, nonzero, sparsity


@dataclass
class EvalReport:
    p1: int = 0
    p2: int = 0
    ae: float = float("nan")
    nonzero: int = 0
    sparsity: float = float("nan")
    train_acc: float = float("nan")
    test_acc: float = float("nan")
    iterations: int = 0
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate_regression(beta_hat, beta_true, iterations: int = 0, wall_time: float = 0.0,
                        zero_threshold: float = ZERO_THRESHOLD) -> EvalReport:
    p1, p2, nz, sp = support_metrics(beta_hat, zero_threshold=zero_threshold)
    return EvalReport(p1=p1, p2=p2, ae=absolute_error(beta_hat, beta_true), nonzero=nz,
                      sparsity=sp, iterations=iterations, wall_time=wall_time)


def evaluate_classification(beta_hat, train, test=None, iterations: int = 0,
                            wall_time: float = 0.0,
                            zero_threshold: float = ZERO_THRESHOLD) -> EvalReport:
    """``train``/``test`` are classification Datasets (stored transformed)."""
    b = np.asarray(beta_hat, dtype=float)
    pen = b[1:] if train.has_intercept else b
    sel = np.abs(pen) > zero_threshold
    rep = EvalReport(nonzero=int(sel.sum()), sparsity=100.0 * (1 - sel.mean()),
                     iterations=iterations, wall_time=wall_time)
    rep.train_acc = classification_accuracy(b, train.raw_features(), train.labels)
    if test is not None:
        rep.test_acc = classification_accuracy(b, test.raw_features(), test.labels)
    return rep
