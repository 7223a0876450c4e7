"""Consensus ADMM solvers for weighted-l1 penalized quantile regression.

Four schemes share one block layout: the rows of (X, y) are split into M
contiguous blocks, each block keeps a local copy ``beta_m`` of the
coefficients together with its duals, and a central step averages

    alpha_m = beta_m + d_m / mu

and soft-thresholds the mean. Variables per block:

    beta_m  local coefficients (p)
    xi, eta nonnegative slacks with y_m - X_m beta_m = xi - eta (n_m)
    d       dual of the consensus constraint beta_m = beta (p)
    e       dual of the residual constraint (n_m)

The QPADM baseline carries the residual ``r`` instead of (xi, eta).

Block updates inside an iteration are independent; they run sequentially in
fixed block order so every run is bit-reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import (
    DataError,
    Dataset,
    ParameterError,
    PenaltyKind,
    PenaltySpec,
    SolverConfig,
    Variant,
    objective,
    prox_check_loss,
    prox_weighted_l1,
)
from .data import Partition, partition
from .linalg import RidgeFactor, ridge_apply, ridge_factor

DIVERGENCE_BOUND = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"iterates diverged at iteration {iteration}")
        self.iteration = iteration


# ---------------------------------------------------------------- subproblems

def update_beta_m(factor: RidgeFactor, y, beta_ref, xi, eta, d, e, mu: float) -> np.ndarray:
    """Local ridge step: (X'X + I)^{-1} [(beta_ref - d/mu) + X'(y - xi + eta + e/mu)]."""
    X = factor.X
    rhs = (beta_ref - d / mu) + X.T @ (y - xi + eta + e / mu)
    return ridge_apply(factor, rhs)


def update_xi(y, Xb, eta, e, mu: float, tau: float) -> np.ndarray:
    return np.maximum(y - Xb + eta + e / mu - tau / mu, 0.0)


def update_eta(y, Xb, xi, e, mu: float, tau: float) -> np.ndarray:
    return np.maximum((tau - 1.0) / mu - (y - Xb - xi + e / mu), 0.0)


def update_beta_central(alphas: Sequence[np.ndarray], w, mu: float) -> np.ndarray:
    """Soft-threshold the block average of alpha_m at level w / (mu M)."""
    if len(alphas) == 0:
        raise ParameterError("need at least one block message")
    M = len(alphas)
    mean = alphas[0].copy()
    for a in alphas[1:]:
        mean += a
    mean /= M
    return prox_weighted_l1(mean, w, mu * M)


def _check_nu(nu):
    if not 0.0 < nu < 1.0:
        raise ParameterError(f"nu must lie in (0, 1), got {nu}")


def gb_correct_standard(eta, eta_t, beta_m, beta_m_t, X, nu: float, flip: bool = False):
    """Back-substitution for the (beta, xi) -> eta -> beta_m ordering.

    Returns the corrected (eta, beta_m). ``flip`` negates the cross term
    (negative control only).
    """
    _check_nu(nu)
    cross = nu * (X @ (beta_m - beta_m_t))
    eta_new = (1 - nu) * eta + nu * eta_t + (cross if flip else -cross)
    beta_new = (1 - nu) * beta_m + nu * beta_m_t
    return eta_new, beta_new


def gb_correct_modified(xi, xi_t, eta, eta_t, nu: float, flip: bool = False):
    """Back-substitution for the beta_m -> xi -> (eta, beta) ordering (block part).

    Only vector additions; the central coefficient is relaxed separately
    with :func:`relax`.
    """
    _check_nu(nu)
    cross = nu * (eta - eta_t)
    xi_new = (1 - nu) * xi + nu * xi_t + (cross if flip else -cross)
    eta_new = (1 - nu) * eta + nu * eta_t
    return xi_new, eta_new


def relax(x, x_t, nu: float):
    return (1 - nu) * x + nu * x_t


# ---------------------------------------------------------------- state

@dataclass
class Block:
    X: np.ndarray
    y: np.ndarray
    factor: RidgeFactor

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass
class BlockState:
    beta: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    d: np.ndarray
    e: np.ndarray
    r: Optional[np.ndarray] = None
    # pre-correction values retained for the deferred dual update
    xi_t: Optional[np.ndarray] = None
    eta_t: Optional[np.ndarray] = None

    def copy(self) -> "BlockState":
        return BlockState(*(None if v is None else v.copy() for v in (
            self.beta, self.xi, self.eta, self.d, self.e, self.r, self.xi_t, self.eta_t)))


@dataclass
class IterationTrace:
    objective: List[float] = field(default_factory=list)
    consensus: List[float] = field(default_factory=list)
    fit_residual: List[float] = field(default_factory=list)
    rel_change: List[float] = field(default_factory=list)
    clamp: List[float] = field(default_factory=list)
    h_norm: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rel_change)

    def as_columns(self) -> dict:
        cols = {
            "iteration": list(range(1, len(self) + 1)),
            "objective": self.objective,
            "consensus": self.consensus,
            "fit_residual": self.fit_residual,
            "rel_change": self.rel_change,
            "clamp": self.clamp,
        }
        if self.h_norm:
            cols["h_norm"] = self.h_norm
        return cols


# ---------------------------------------------------------------- schemes

class _Scheme:
    """Shared setup: blocks, weights, initial states."""

    ordering = "standard"

    def __init__(self, blocks: List[Block], weights: np.ndarray, cfg: SolverConfig):
        self.blocks = blocks
        self.w = np.asarray(weights, dtype=float)
        self.cfg = cfg
        self.mu = float(cfg.mu)
        self.nu = float(cfg.nu)
        self.tau = float(cfg.tau)
        p = blocks[0].X.shape[1]
        c = cfg.init_value
        self.beta = np.full(p, c)
        self.states = [
            BlockState(np.full(p, c), np.full(b.n, c), np.full(b.n, c),
                       np.full(p, c), np.full(b.n, c))
            for b in blocks
        ]
        self.clamped = 0.0

    @property
    def M(self) -> int:
        return len(self.blocks)

    def load(self, other: "_Scheme") -> None:
        """Warm start from another scheme's state (same block layout)."""
        self.beta = other.beta.copy()
        if type(other) is type(self):
            self.states = [s.copy() for s in other.states]
            self._load_extra(other)
        else:
            for s, o in zip(self.states, other.states):
                s.beta = o.beta.copy()

    def _load_extra(self, other) -> None:
        pass

    def duals(self):
        """Current (d_m, e_m) per block, with any deferred update applied."""
        return [(s.d, s.e) for s in self.states]

    def fit_residual(self) -> float:
        out = 0.0
        for b, s in zip(self.blocks, self.states):
            if s.r is not None:
                res = b.y - b.X @ s.beta - s.r
            else:
                res = b.y - b.X @ s.beta - s.xi + s.eta
            out = max(out, float(np.linalg.norm(res)))
        return out

    def consensus(self) -> float:
        return max(float(np.linalg.norm(s.beta - self.beta)) for s in self.states)

    def _clamp(self, v: np.ndarray) -> np.ndarray:
        if not self.cfg.clamp:
            return v
        neg = np.minimum(v, 0.0)
        if neg.any():
            self.clamped = max(self.clamped, float(-neg.min()))
            return np.maximum(v, 0.0)
        return v

    def max_abs(self) -> float:
        vals = [np.abs(self.beta).max()]
        for s in self.states:
            for v in (s.beta, s.xi, s.eta, s.d, s.e):
                vals.append(np.abs(v).max())
        m = max(vals)
        return m if np.isfinite(m) else np.inf

    def g_vector(self) -> np.ndarray:
        """Iterate (b, c, d) in the ordering's grouping; d uses the sign of the
        Lagrangian -d'(Aa + Bb + Cc - e), i.e. consensus duals negated."""
        duals = self.duals()
        d_part = np.concatenate([-d for d, _ in duals] + [e for _, e in duals])
        return np.concatenate([self._bc_vector(), d_part])

    def _bc_vector(self) -> np.ndarray:
        raise NotImplementedError

    def step(self) -> None:
        raise NotImplementedError


class QPADM(_Scheme):
    """Residual-splitting consensus ADMM: beta -> r_m -> beta_m -> duals."""

    def __init__(self, blocks, weights, cfg):
        super().__init__(blocks, weights, cfg)
        c = cfg.init_value
        for s, b in zip(self.states, blocks):
            s.r = np.full(b.n, c)

    def _bc_vector(self) -> np.ndarray:
        return np.concatenate([s.r for s in self.states] + [s.beta for s in self.states])

    def step(self) -> None:
        mu, tau = self.mu, self.tau
        alphas = [s.beta + s.d / mu for s in self.states]
        self.beta = update_beta_central(alphas, self.w, mu)
        for b, s in zip(self.blocks, self.states):
            s.r = prox_check_loss(b.y - b.X @ s.beta + s.e / mu, tau, mu)
            zero = np.zeros_like(s.r)
            s.beta = update_beta_m(b.factor, b.y, self.beta, s.r, zero, s.d, s.e, mu)
            s.e = s.e + mu * (b.y - b.X @ s.beta - s.r)
            s.d = s.d + mu * (s.beta - self.beta)
            s.xi, s.eta = np.maximum(s.r, 0.0), np.maximum(-s.r, 0.0)


class QPADMSlack(_Scheme):
    """Slack scheme: beta -> xi_m -> eta_m -> beta_m -> duals.

    With ``gb=True`` the fresh (eta_m, beta_m) are treated as predictions and
    corrected by Gaussian back substitution after the dual step.
    """

    gb = False

    def _bc_vector(self) -> np.ndarray:
        return np.concatenate([s.eta for s in self.states] + [s.beta for s in self.states])

    def step(self) -> None:
        mu, tau, nu = self.mu, self.tau, self.nu
        alphas = [s.beta + s.d / mu for s in self.states]
        self.beta = update_beta_central(alphas, self.w, mu)
        for b, s in zip(self.blocks, self.states):
            Xb = b.X @ s.beta
            xi = update_xi(b.y, Xb, s.eta, s.e, mu, tau)
            eta_t = update_eta(b.y, Xb, xi, s.e, mu, tau)
            beta_t = update_beta_m(b.factor, b.y, self.beta, xi, eta_t, s.d, s.e, mu)
            s.d = s.d + mu * (beta_t - self.beta)
            s.e = s.e + mu * (b.y - b.X @ beta_t - xi + eta_t)
            s.xi = xi
            if self.gb:
                eta, beta_m = gb_correct_standard(
                    s.eta, eta_t, s.beta, beta_t, b.X, nu, flip=self.cfg.break_correction)
                s.eta = self._clamp(eta)
                s.beta = beta_m
            else:
                s.eta, s.beta = eta_t, beta_t


class QPADMSlackGB(QPADMSlack):
    gb = True


class MQPADMSlackGB(_Scheme):
    """Reordered slack scheme beta_m -> xi_m -> eta_m -> beta with the
    addition-only back substitution on (xi_m, eta_m, beta).

    The dual update of iteration k runs at the start of iteration k + 1 from
    the retained predictions, so blocks only talk to the centre once per
    iteration.
    """

    ordering = "modified"

    def __init__(self, blocks, weights, cfg):
        super().__init__(blocks, weights, cfg)
        self.beta_t = None
        self.pending = False

    def _load_extra(self, other) -> None:
        self.beta_t = None if other.beta_t is None else other.beta_t.copy()
        self.pending = other.pending

    def _pending_duals(self, b: Block, s: BlockState):
        d = s.d + self.mu * (s.beta - self.beta_t)
        e = s.e + self.mu * (b.y - b.X @ s.beta - s.xi_t + s.eta_t)
        return d, e

    def duals(self):
        if not self.pending:
            return [(s.d, s.e) for s in self.states]
        return [self._pending_duals(b, s) for b, s in zip(self.blocks, self.states)]

    def _bc_vector(self) -> np.ndarray:
        return np.concatenate([s.xi for s in self.states]
                              + [s.eta for s in self.states] + [self.beta])

    def step(self) -> None:
        mu, tau, nu = self.mu, self.tau, self.nu
        flip = self.cfg.break_correction
        alphas = []
        for b, s in zip(self.blocks, self.states):
            if self.pending:
                s.d, s.e = self._pending_duals(b, s)
            s.beta = update_beta_m(b.factor, b.y, self.beta, s.xi, s.eta, s.d, s.e, mu)
            Xb = b.X @ s.beta
            s.xi_t = update_xi(b.y, Xb, s.eta, s.e, mu, tau)
            s.eta_t = update_eta(b.y, Xb, s.xi_t, s.e, mu, tau)
            xi, eta = gb_correct_modified(s.xi, s.xi_t, s.eta, s.eta_t, nu, flip=flip)
            s.xi = self._clamp(xi)
            s.eta = eta
            alphas.append(s.beta + s.d / mu)
        self.beta_t = update_beta_central(alphas, self.w, mu)
        self.beta = relax(self.beta, self.beta_t, nu)
        self.pending = True


SCHEMES = {
    Variant.QPADM: QPADM,
    Variant.QPADM_SLACK: QPADMSlack,
    Variant.QPADM_SLACK_GB: QPADMSlackGB,
    Variant.MQPADM_SLACK_GB: MQPADMSlackGB,
}


# ---------------------------------------------------------------- driver

@dataclass
class FitResult:
    beta: np.ndarray
    n_iter: int
    converged: bool
    trace: IterationTrace
    wall_time: float
    variant: Variant
    scheme: Optional[_Scheme] = field(default=None, repr=False)
    g_history: Optional[List[np.ndarray]] = field(default=None, repr=False)
    outer_steps: int = 1
    weight_history: Optional[List[np.ndarray]] = field(default=None, repr=False)
    inner_iters: Optional[List[int]] = None

    @property
    def stop_history(self) -> List[float]:
        return self.trace.rel_change


def make_blocks(data: Dataset, M: int, part: Optional[Partition] = None) -> List[Block]:
    if part is None:
        part = partition(data.n, M)
    if part.M != M:
        raise DataError(f"partition has {part.M} blocks, config asks for {M}")
    if any(s < 1 for s in part.sizes):
        raise DataError("empty block in partition")
    return [Block(Xm, ym, ridge_factor(Xm))
            for Xm, ym in zip(part.split(data.X), part.split(data.y))]


def build_scheme(data: Dataset, weights, cfg: SolverConfig,
                 blocks: Optional[List[Block]] = None, part: Optional[Partition] = None) -> _Scheme:
    if blocks is None:
        blocks = make_blocks(data, cfg.M, part)
    return SCHEMES[cfg.variant](blocks, weights, cfg)


def _weights(penalty, p: int) -> np.ndarray:
    if isinstance(penalty, PenaltySpec):
        if penalty.kind is not PenaltyKind.WEIGHTED_L1:
            raise ParameterError("ADMM solvers take weighted-l1 penalties; use lla_solve for SCAD/MCP")
        w = penalty.lam
    else:
        w = np.asarray(penalty, dtype=float)
    if w.shape != (p,):
        raise ParameterError(f"penalty has {w.shape[0]} weights, data has {p} columns")
    return w


def run(scheme: _Scheme, data: Dataset, penalty: PenaltySpec, cfg: SolverConfig,
        callback=None) -> FitResult:
    """Iterate ``scheme`` until the relative coefficient change drops below tol.

    The change test alone can fire while the central coefficients sit at an
    exact zero of the soft threshold, so by default the consensus gap must
    also be small (``cfg.consensus_tol``).
    """
    trace = IterationTrace()
    history = [scheme.g_vector()] if cfg.record_states else None
    t0 = time.perf_counter()
    converged = False
    k = 0
    for k in range(1, cfg.max_iter + 1):
        prev = scheme.beta.copy()
        scheme.clamped = 0.0
        scheme.step()
        if not scheme.max_abs() < DIVERGENCE_BOUND:
            raise DivergenceError(k)
        change = float(np.linalg.norm(scheme.beta - prev)) / max(1.0, float(np.linalg.norm(scheme.beta)))
        trace.rel_change.append(change)
        trace.objective.append(objective(data, scheme.beta, penalty, scheme.tau))
        trace.consensus.append(scheme.consensus())
        trace.fit_residual.append(scheme.fit_residual())
        trace.clamp.append(scheme.clamped)
        if history is not None:
            history.append(scheme.g_vector())
        if callback is not None:
            callback(k, scheme)
        if change <= cfg.tol and (
                cfg.consensus_tol is None
                or trace.consensus[-1] <= cfg.consensus_tol * max(1.0, float(np.linalg.norm(scheme.beta)))):
            converged = True
            break
    return FitResult(scheme.beta.copy(), k, converged, trace,
                     time.perf_counter() - t0, cfg.variant, scheme, history)


def solve(data: Dataset, penalty, cfg: SolverConfig, warm_start: Optional[FitResult] = None,
          part: Optional[Partition] = None, blocks: Optional[List[Block]] = None) -> FitResult:
    """Fit a weighted-l1 penalized quantile model with the configured variant.

    ``penalty`` is a :class:`PenaltySpec` of kind l1 or a raw weight vector.
    ``warm_start`` reuses a previous fit's full iterate (duals included) when
    the block layouts agree, otherwise just its coefficients.
    """
    w = _weights(penalty, data.p)
    if not isinstance(penalty, PenaltySpec):
        penalty = PenaltySpec(PenaltyKind.WEIGHTED_L1, w)
    scheme = build_scheme(data, w, cfg, blocks=blocks, part=part)
    if warm_start is not None:
        prev = warm_start.scheme
        if prev is not None and prev.M == scheme.M:
            scheme.load(prev)
        else:
            scheme.beta = warm_start.beta.copy()
            for s in scheme.states:
                s.beta = warm_start.beta.copy()
    return run(scheme, data, penalty, cfg)
