"""HBIC model selection over a lambda grid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Dataset, ParameterError, PenaltyKind, PenaltySpec, SolverConfig, total_check_loss
from .metrics import ZERO_THRESHOLD
from .nonconvex import LLAConfig, lla_solve
from .solvers import DivergenceError, FitResult, solve


class SelectionError(RuntimeError):
    pass


def _penalized_coefs(beta: np.ndarray, data: Dataset) -> np.ndarray:
    return beta[1:] if data.has_intercept else beta


def support_size(beta, data: Dataset, zero_threshold: float = ZERO_THRESHOLD) -> int:
    return int(np.sum(np.abs(_penalized_coefs(np.asarray(beta), data)) > zero_threshold))


def hbic_value(total_loss: float, size: int, n: int, p: int) -> float:
    """log(total loss) + size * log(log n) / n * 6 log p."""
    if n < 3:
        raise ParameterError(f"HBIC needs n >= 3, got {n}")
    if total_loss <= 0:
        return -math.inf
    return math.log(total_loss) + size * (math.log(math.log(n)) / n) * 6.0 * math.log(p)


def hbic(fit_beta, data: Dataset, tau: float, zero_threshold: float = ZERO_THRESHOLD) -> float:
    """HBIC of a coefficient vector on pooled data.

    The check loss is used for both tasks (classification rows are stored
    transformed). A perfect fit returns ``-inf``. ``p`` counts penalized
    columns only.
    """
    beta = np.asarray(fit_beta, dtype=float)
    loss = total_check_loss(data.y - data.X @ beta, tau)
    p = data.p - (1 if data.has_intercept else 0)
    return hbic_value(loss, support_size(beta, data, zero_threshold), data.n, max(p, 1))


@dataclass
class HbicRecord:
    lambda_scalar: float
    hbic: float
    support_size: int
    fit: Optional[FitResult]
    diverged: bool = False

    @property
    def zero_loss(self) -> bool:
        return self.hbic == -math.inf


def lambda_max(data: Dataset, tau: float) -> float:
    """Largest |X_j' psi_tau(y)| over penalized columns, psi_tau(u) = tau - I(u < 0)."""
    psi = tau - (data.y < 0).astype(float)
    g = np.abs(data.X.T @ psi)
    if data.has_intercept:
        g = g[1:]
    return float(g.max()) if g.size else 0.0


def default_grid(data: Dataset, tau: float, n_points: int = 20, ratio: float = 0.01) -> List[float]:
    """Log-spaced grid from lambda_max down to ratio * lambda_max."""
    top = lambda_max(data, tau)
    if top <= 0:
        raise SelectionError("lambda_max is zero; response carries no signal for the grid")
    return list(np.geomspace(top, ratio * top, n_points))


def grid_search(data: Dataset, grid: Sequence[float], penalty_kind="l1", cfg: SolverConfig = None,
                a: Optional[float] = None, lla: Optional[LLAConfig] = None, part=None,
                warm_start: bool = True) -> Tuple[HbicRecord, List[HbicRecord]]:
    """Fit every grid point from largest to smallest lambda and pick the HBIC minimizer.

    Ties go to the larger lambda. Diverged fits are recorded and skipped.
    Records are returned in sweep order (descending lambda).
    """
    if len(grid) == 0:
        raise ParameterError("empty lambda grid")
    if cfg is None:
        cfg = SolverConfig()
    kind = PenaltyKind(penalty_kind)
    if any(not lam > 0 for lam in grid):
        raise ParameterError("grid values must be positive")
    lams = sorted({float(v) for v in grid}, reverse=True)
    records: List[HbicRecord] = []
    prev = None
    for lam in lams:
        pen = PenaltySpec.uniform(kind, lam, data.p, data.has_intercept, a)
        start = prev if warm_start else None
        try:
            if kind is PenaltyKind.WEIGHTED_L1:
                fit = solve(data, pen, cfg, warm_start=start, part=part)
            else:
                lcfg = lla or LLAConfig(inner_cfg=cfg)
                fit = lla_solve(data, pen, lcfg, part=part, warm_start=start)
        except DivergenceError:
            records.append(HbicRecord(lam, math.nan, 0, None, diverged=True))
            continue
        prev = fit
        records.append(HbicRecord(lam, hbic(fit.beta, data, cfg.tau),
                                  support_size(fit.beta, data), fit))
    ok = [r for r in records if not r.diverged]
    if not ok:
        raise SelectionError("every grid point diverged")
    best = ok[0]
    for r in ok[1:]:
        if r.hbic < best.hbic:
            best = r
    return best, records
