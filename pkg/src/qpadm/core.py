"""Domain types, the check loss, and the scalar/vector proximal maps shared by
all solvers."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np


class ParameterError(ValueError):
    """Raised for invalid numeric parameters (tau, mu, nu, a, ...)."""


class DataError(ValueError):
    """Raised for malformed or non-finite input data."""


class Task(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class PenaltyKind(str, Enum):
    WEIGHTED_L1 = "l1"
    SCAD = "scad"
    MCP = "mcp"


class Variant(str, Enum):
    QPADM = "qpadm"
    QPADM_SLACK = "slack"
    QPADM_SLACK_GB = "slack-gb"
    MQPADM_SLACK_GB = "m-slack-gb"

    @property
    def is_gb(self) -> bool:
        return self in (Variant.QPADM_SLACK_GB, Variant.MQPADM_SLACK_GB)


DEFAULT_A = {PenaltyKind.SCAD: 3.7, PenaltyKind.MCP: 3.0}


def check_tau(tau: float, task: Task = Task.REGRESSION) -> float:
    tau = float(tau)
    if not 0.0 < tau <= 1.0:
        raise ParameterError(f"tau must lie in (0, 1], got {tau}")
    if tau == 1.0 and Task(task) is not Task.CLASSIFICATION:
        raise ParameterError("tau = 1 (hinge loss) is only valid for classification")
    return tau


@dataclass
class Dataset:
    """Design matrix and response in the unified regression/classification form.

    For classification the rows are stored already multiplied by their label
    and the response is identically 1, so every solver sees a regression
    problem. The original labels are kept in ``labels`` for accuracy metrics.
    """

    X: np.ndarray
    y: np.ndarray
    task: Task = Task.REGRESSION
    has_intercept: bool = False
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.task = Task(self.task)
        if self.X.ndim != 2:
            raise DataError("features must be a 2-d array")
        n, p = self.X.shape
        if n < 1 or p < 1:
            raise DataError(f"need n >= 1 and p >= 1, got shape {self.X.shape}")
        if self.y.shape[0] != n:
            raise DataError(f"response has length {self.y.shape[0]}, expected {n}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DataError("non-finite entries in features or response")
        if self.task is Task.CLASSIFICATION and not np.all(self.y == 1.0):
            raise DataError("classification datasets must be stored transformed (response = 1)")

    @classmethod
    def regression(cls, X, y, intercept: bool = False) -> "Dataset":
        X = np.asarray(X, dtype=float)
        if intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
        return cls(X, y, Task.REGRESSION, has_intercept=intercept)

    @classmethod
    def classification(cls, X, labels, intercept: bool = False) -> "Dataset":
        """Apply the label transform: x_i -> y_i x_i, response -> 1."""
        X = np.asarray(X, dtype=float)
        labels = np.asarray(labels, dtype=float).ravel()
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise DataError("classification labels must be -1 or +1")
        if intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
        return cls(X * labels[:, None], np.ones(X.shape[0]), Task.CLASSIFICATION,
                   has_intercept=intercept, labels=labels)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def raw_features(self) -> np.ndarray:
        """Undo the classification transform (identity for regression)."""
        if self.task is Task.CLASSIFICATION:
            return self.X * self.labels[:, None]
        return self.X


@dataclass
class PenaltySpec:
    kind: PenaltyKind
    lam: np.ndarray
    a: Optional[float] = None

    def __post_init__(self):
        self.kind = PenaltyKind(self.kind)
        self.lam = np.asarray(self.lam, dtype=float).ravel()
        if np.any(self.lam < 0) or not np.all(np.isfinite(self.lam)):
            raise ParameterError("penalty weights must be finite and nonnegative")
        if self.kind is not PenaltyKind.WEIGHTED_L1:
            if self.a is None:
                self.a = DEFAULT_A[self.kind]
            self.a = float(self.a)
            if self.kind is PenaltyKind.SCAD and self.a <= 2:
                raise ParameterError(f"SCAD requires a > 2, got {self.a}")
            if self.kind is PenaltyKind.MCP and self.a <= 1:
                raise ParameterError(f"MCP requires a > 1, got {self.a}")

    @classmethod
    def uniform(cls, kind, lam: float, p: int, intercept: bool = False, a=None):
        """Broadcast a scalar level to all penalized coordinates."""
        w = np.full(p, float(lam))
        if intercept:
            w[0] = 0.0
        return cls(kind, w, a)

    def value(self, beta: np.ndarray) -> float:
        """Penalty P_lambda(|beta|) summed over coordinates."""
        t = np.abs(beta)
        lam = self.lam
        if self.kind is PenaltyKind.WEIGHTED_L1:
            return float(lam @ t)
        a = self.a
        if self.kind is PenaltyKind.SCAD:
            v = np.where(
                t <= lam, lam * t,
                np.where(t < a * lam,
                         (2 * a * lam * t - t ** 2 - lam ** 2) / (2 * (a - 1)),
                         (a + 1) * lam ** 2 / 2))
            return float(v.sum())
        v = np.where(t <= a * lam, lam * t - t ** 2 / (2 * a), a * lam ** 2 / 2)
        return float(v.sum())


@dataclass
class SolverConfig:
    tau: float = 0.5
    mu: float = 10.0
    nu: float = 0.75
    M: int = 1
    max_iter: int = 500
    tol: float = 1e-4
    variant: Variant = Variant.MQPADM_SLACK_GB
    init_value: float = 0.01
    seed: int = 0
    clamp: bool = True
    # Stopping also requires max_m ||beta_m - beta|| / max(1, ||beta||) below
    # this; None restores the plain relative-change rule.
    consensus_tol: Optional[float] = 1e-2
    # Testing hook for the diagnostics negative control: flips the sign of the
    # cross term in the Gaussian back-substitution correction.
    break_correction: bool = False
    record_states: bool = False

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if not 0.0 < float(self.tau) <= 1.0:
            raise ParameterError(f"tau must lie in (0, 1], got {self.tau}")
        if not self.mu > 0:
            raise ParameterError(f"mu must be positive, got {self.mu}")
        if self.variant.is_gb and not 0.0 < self.nu < 1.0:
            raise ParameterError(f"nu must lie in (0, 1), got {self.nu}")
        if int(self.M) < 1:
            raise ParameterError(f"M must be >= 1, got {self.M}")
        if int(self.max_iter) < 1:
            raise ParameterError("max_iter must be positive")
        if not self.tol > 0:
            raise ParameterError("tol must be positive")
        if self.consensus_tol is not None and not self.consensus_tol > 0:
            raise ParameterError("consensus_tol must be positive or None")
        self.M = int(self.M)
        self.max_iter = int(self.max_iter)


def check_loss(u, tau: float):
    """Quantile check loss rho_tau(u) = u (tau - I(u < 0)), elementwise."""
    if not 0.0 < tau <= 1.0:
        raise ParameterError(f"tau must lie in (0, 1], got {tau}")
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 0, tau * u, (tau - 1.0) * u)
    return float(out) if out.ndim == 0 else out


def total_check_loss(r: np.ndarray, tau: float) -> float:
    return float(np.sum(check_loss(r, tau)))


def slack_decompose(r, tau: float):
    """Split residuals into positive/negative parts (xi, eta) with xi - eta = r.

    ``tau * sum(xi) + (1 - tau) * sum(eta)`` equals the total check loss of r.
    """
    r = np.asarray(r, dtype=float)
    return np.maximum(r, 0.0), np.maximum(-r, 0.0)


def prox_check_loss(u, tau: float, mu: float):
    """argmin_r rho_tau(r) + mu/2 (r - u)^2, elementwise.

    Points exactly on the dead-zone boundary map to 0.
    """
    if not mu > 0:
        raise ParameterError(f"mu must be positive, got {mu}")
    u = np.asarray(u, dtype=float)
    hi = tau / mu
    lo = (1.0 - tau) / mu
    out = np.where(u > hi, u - hi, np.where(u < -lo, u + lo, 0.0))
    return float(out) if out.ndim == 0 else out


def prox_weighted_l1(v, w, c: float) -> np.ndarray:
    """argmin_b sum_j w_j |b_j| + c/2 ||b - v||^2 (componentwise soft threshold)."""
    if not c > 0:
        raise ParameterError(f"prox scale must be positive, got {c}")
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape != w.shape:
        raise ParameterError(f"shape mismatch: {v.shape} vs {w.shape}")
    return np.sign(v) * np.maximum(np.abs(v) - w / c, 0.0)


def objective(data: Dataset, beta: np.ndarray, penalty: PenaltySpec, tau: float) -> float:
    """Penalized check-loss objective sum_i rho(y_i - x_i'beta) + P(|beta|)."""
    return total_check_loss(data.y - data.X @ beta, tau) + penalty.value(beta)
