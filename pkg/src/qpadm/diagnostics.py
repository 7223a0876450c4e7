"""Dense convergence machinery for small instances of the GB schemes.

The slack problem is written as

    min theta_a(a) + theta_b(b) + theta_c(c)   s.t.  A a + B b + C c = e

with rows ordered as the M consensus blocks (beta_m - beta = 0) followed by
the M residual blocks (X_m beta_m + xi_m - eta_m = y_m). Two groupings are
supported:

    standard  a = (beta, xi_1..xi_M)   b = (eta_1..eta_M)   c = (beta_1..beta_M)
    modified  a = (beta_1..beta_M)     b = (xi_1..xi_M)     c = (eta_1..eta_M, beta)

The iterate is g = (b, c, lam) where lam is the multiplier of
-lam'(Aa + Bb + Cc - e); in solver terms lam = (-d_1..-d_M, e_1..e_M).

Everything here materializes dense matrices and is meant for desk-scale
checks only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import DataError, Dataset, ParameterError, PenaltyKind, PenaltySpec, SolverConfig
from .solvers import FitResult, build_scheme, make_blocks, run

MAX_DIM = 2500


class Ordering(str, Enum):
    STANDARD = "standard"
    MODIFIED = "modified"


@dataclass
class Piece:
    """A slice of a variable group with a separable objective.

    kind is "free" (zero objective), "linear" (coef' z plus z >= 0) or
    "l1" (weights' |z|). For "l1" the weights are supplied at solve time.
    """

    name: str
    cols: slice
    kind: str
    coef: float = 0.0


@dataclass
class ConstraintSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    e: np.ndarray
    ordering: Ordering
    sizes: Tuple[int, ...]
    p: int
    pieces: Dict[str, List[Piece]] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.sizes)

    @property
    def n(self) -> int:
        return int(sum(self.sizes))

    @property
    def dims(self) -> Tuple[int, int, int]:
        """Lengths of (b, c, lam)."""
        return self.B.shape[1], self.C.shape[1], self.A.shape[0]

    def residual(self, a, b, c) -> np.ndarray:
        return self.A @ a + self.B @ b + self.C @ c - self.e

    def split(self, g: np.ndarray):
        nb, nc, nl = self.dims
        if g.shape != (nb + nc + nl,):
            raise DataError(f"iterate has length {g.shape[0]}, expected {nb + nc + nl}")
        return g[:nb], g[nb:nb + nc], g[nb + nc:]


def _blockdiag(mats: Sequence[np.ndarray]) -> np.ndarray:
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def build_constraints(X_blocks: Sequence[np.ndarray], ordering="standard", tau: float = 0.5,
                      y_blocks: Optional[Sequence[np.ndarray]] = None) -> ConstraintSystem:
    """Assemble A, B, C, e for the given row blocks.

    ``tau`` only enters the per-piece objective coefficients used by the
    reference iterator; the matrices themselves do not depend on it.
    """
    ordering = Ordering(ordering)
    X_blocks = [np.atleast_2d(np.asarray(X, dtype=float)) for X in X_blocks]
    if not X_blocks:
        raise DataError("need at least one block")
    p = X_blocks[0].shape[1]
    if any(X.shape[1] != p for X in X_blocks):
        raise DataError("blocks disagree on the number of columns")
    sizes = tuple(X.shape[0] for X in X_blocks)
    M, n = len(sizes), sum(sizes)
    if y_blocks is None:
        y_blocks = [np.zeros(k) for k in sizes]
    y = np.concatenate([np.asarray(v, dtype=float).ravel() for v in y_blocks])
    if y.shape != (n,):
        raise DataError("response blocks do not match block sizes")
    rows = M * p + n
    # b + c + lam
    total = (n + M * p + rows) if ordering is Ordering.STANDARD else (n + n + p + rows)
    if total > MAX_DIM:
        raise DataError(f"system too large for dense diagnostics ({total} > {MAX_DIM})")

    cons_minus = np.vstack([-np.eye(p)] * M)          # beta enters each consensus block with -I
    cons_local = np.eye(M * p)                        # beta_m enters its own block with +I
    X_diag = _blockdiag(X_blocks)
    I_n = np.eye(n)

    def stack(top, bottom):
        return np.vstack([top, bottom])

    if ordering is Ordering.STANDARD:
        A = np.hstack([stack(cons_minus, np.zeros((n, p))), stack(np.zeros((M * p, n)), I_n)])
        B = stack(np.zeros((M * p, n)), -I_n)
        C = stack(cons_local, X_diag)
        pieces = {
            "a": [Piece("beta", slice(0, p), "l1"), Piece("xi", slice(p, p + n), "linear", tau)],
            "b": [Piece("eta", slice(0, n), "linear", 1.0 - tau)],
            "c": [Piece("beta_m", slice(0, M * p), "free")],
        }
    else:
        A = stack(cons_local, X_diag)
        B = stack(np.zeros((M * p, n)), I_n)
        C = np.hstack([stack(np.zeros((M * p, n)), -I_n), stack(cons_minus, np.zeros((n, p)))])
        pieces = {
            "a": [Piece("beta_m", slice(0, M * p), "free")],
            "b": [Piece("xi", slice(0, n), "linear", tau)],
            "c": [Piece("eta", slice(0, n), "linear", 1.0 - tau), Piece("beta", slice(n, n + p), "l1")],
        }
    e = np.concatenate([np.zeros(M * p), y])
    return ConstraintSystem(A, B, C, e, ordering, sizes, p, pieces)


def constraints_for(data: Dataset, M: int, ordering="standard", tau: float = 0.5,
                    part=None) -> ConstraintSystem:
    blocks = make_blocks(data, M, part)
    return build_constraints([b.X for b in blocks], ordering, tau, [b.y for b in blocks])


def scheme_groups(scheme) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Current (a, b, c) of a slack-type solver in its ordering's grouping."""
    st = scheme.states
    if scheme.ordering == "standard":
        a = np.concatenate([scheme.beta] + [s.xi for s in st])
        b = np.concatenate([s.eta for s in st])
        c = np.concatenate([s.beta for s in st])
    else:
        a = np.concatenate([s.beta for s in st])
        b = np.concatenate([s.xi for s in st])
        c = np.concatenate([s.eta for s in st] + [scheme.beta])
    return a, b, c


# ---------------------------------------------------------------- GB matrices

@dataclass
class GBMatrices:
    Q: np.ndarray
    M: np.ndarray
    H: np.ndarray
    G: np.ndarray
    mu: float
    nu: float


def build_gb_matrices(cs: ConstraintSystem, mu: float, nu: float, flip: bool = False) -> GBMatrices:
    """Q, M, H, G for the correction with step ``nu``.

    ``flip`` negates the off-diagonal block of M (negative control); Q, H
    and G are always the unmodified ones.
    """
    if not 0.0 < nu < 1.0:
        raise ParameterError(f"nu must lie in (0, 1), got {nu}")
    if not mu > 0:
        raise ParameterError(f"mu must be positive, got {mu}")
    B, C = cs.B, cs.C
    nb, nc, nl = cs.dims
    BtB, BtC, CtB, CtC = B.T @ B, B.T @ C, C.T @ B, C.T @ C
    proj = np.linalg.solve(BtB, BtC)               # (B'B)^{-1} B'C
    Ib, Ic, Il = np.eye(nb), np.eye(nc), np.eye(nl)
    Zbc, Zcb = np.zeros((nb, nc)), np.zeros((nc, nb))
    Zbl, Zcl = np.zeros((nb, nl)), np.zeros((nc, nl))

    Q = np.block([[mu * BtB, Zbc, Zbl],
                  [mu * CtB, mu * CtC, Zcl],
                  [-B, -C, Il / mu]])
    off = nu * proj if flip else -nu * proj
    Mm = np.block([[nu * Ib, off, Zbl],
                   [Zcb, nu * Ic, Zcl],
                   [-mu * B, -mu * C, Il]])
    s = mu / nu
    H = np.block([[s * BtB, s * BtC, Zbl],
                  [s * CtB, s * (CtC + CtB @ proj), Zcl],
                  [Zbl.T, Zcl.T, Il / mu]])
    G = np.block([[(1 - nu) * mu * BtB, Zbc, Zbl],
                  [Zcb, (1 - nu) * mu * CtC, Zcl],
                  [Zbl.T, Zcl.T, Il / mu]])
    return GBMatrices(Q, Mm, H, G, mu, nu)


def min_eigenvalue(S: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (S + S.T)).min())


def h_norm(u: np.ndarray, H: np.ndarray) -> float:
    return float(np.sqrt(max(float(u @ H @ u), 0.0)))


def h_norm_trace(history: Sequence[np.ndarray], gb: GBMatrices,
                 g_inf: Optional[np.ndarray] = None) -> List[Tuple[float, float]]:
    """Pairs (||g^k - g^{k+1}||_H, ||g^k - g^inf||_H) for k = 0..K-1.

    ``g_inf`` defaults to the last recorded iterate.
    """
    if len(history) < 2:
        return []
    dim = gb.H.shape[0]
    for g in history:
        if g.shape != (dim,):
            raise DataError(f"iterate length {g.shape[0]} does not match H ({dim})")
    if g_inf is None:
        g_inf = history[-1]
    return [(h_norm(history[k] - history[k + 1], gb.H), h_norm(history[k] - g_inf, gb.H))
            for k in range(len(history) - 1)]


def is_nonincreasing(values: Sequence[float], slack: float) -> bool:
    return all(values[k + 1] <= values[k] + slack for k in range(len(values) - 1))


def contraction_holds(dist_to_limit: Sequence[float], slack: float = 1e-8) -> bool:
    """Squared distances to the limit never grow by more than ``slack``."""
    sq = [d * d for d in dist_to_limit]
    return is_nonincreasing(sq, slack)


def rate_witness(history: Sequence[np.ndarray], gb: GBMatrices,
                 g_inf: Optional[np.ndarray] = None) -> float:
    """Largest c with (k + 1) ||g^k - g^{k+1}||_H^2 <= ||g^0 - g^inf||_H^2 / c along the run."""
    tr = h_norm_trace(history, gb, g_inf)
    if not tr:
        return float("inf")
    start = tr[0][1] ** 2
    worst = max((k + 1) * d * d for k, (d, _) in enumerate(tr))
    return float("inf") if worst == 0 else start / worst


# ---------------------------------------------------------------- reference iterator

def _solve_group(cs: ConstraintSystem, group: str, rest: np.ndarray, lam: np.ndarray,
                 mu: float, weights: np.ndarray) -> np.ndarray:
    """argmin theta(z) - lam'Zz + mu/2 ||Zz + rest - e||^2 over one group."""
    Z = {"a": cs.A, "b": cs.B, "c": cs.C}[group]
    target = mu * (cs.e - rest) + lam
    out = np.zeros(Z.shape[1])
    for piece in cs.pieces[group]:
        Zp = Z[:, piece.cols]
        rhs = Zp.T @ target
        S = Zp.T @ Zp
        if piece.kind == "free":
            out[piece.cols] = np.linalg.solve(mu * S, rhs)
            continue
        s = np.diag(S)
        if not np.allclose(S, np.diag(s)):
            raise DataError(f"piece {piece.name} needs a diagonal gram matrix")
        v = rhs / (mu * s)
        if piece.kind == "linear":
            out[piece.cols] = np.maximum(v - piece.coef / (mu * s), 0.0)
        else:
            out[piece.cols] = np.sign(v) * np.maximum(np.abs(v) - weights / (mu * s), 0.0)
    return out


@dataclass
class Prediction:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    lam: np.ndarray

    @property
    def g(self) -> np.ndarray:
        return np.concatenate([self.b, self.c, self.lam])


def predict(g: np.ndarray, cs: ConstraintSystem, weights, mu: float) -> Prediction:
    """Gauss-Seidel sweep a -> b -> c; the multiplier uses the old (b, c)."""
    b, c, lam = cs.split(g)
    w = np.asarray(weights, dtype=float)
    a_t = _solve_group(cs, "a", cs.B @ b + cs.C @ c, lam, mu, w)
    b_t = _solve_group(cs, "b", cs.A @ a_t + cs.C @ c, lam, mu, w)
    c_t = _solve_group(cs, "c", cs.A @ a_t + cs.B @ b_t, lam, mu, w)
    lam_t = lam - mu * cs.residual(a_t, b, c)
    return Prediction(a_t, b_t, c_t, lam_t)


def prediction_correction_step(g: np.ndarray, cs: ConstraintSystem, weights, mu: float,
                               nu: float, gb: Optional[GBMatrices] = None,
                               flip: bool = False) -> Tuple[np.ndarray, Prediction]:
    """One iteration g -> g - M (g - g~) of the two-step form. Returns (g_next, prediction)."""
    if gb is None:
        gb = build_gb_matrices(cs, mu, nu, flip=flip)
    pred = predict(g, cs, weights, mu)
    return g - gb.M @ (g - pred.g), pred


def solution_iterate(cs: ConstraintSystem, beta, xi, eta, e) -> np.ndarray:
    """Iterate g = (b, c, lam) of a known optimum in the ordering of ``cs``.

    ``beta``, ``xi``, ``eta`` are a primal solution on the pooled rows and
    ``e`` the multipliers of the residual constraints. Consensus multipliers
    follow from local stationarity, d_m = X_m' e_m. Every optimum is a valid
    reference point for the contraction property, unlike a truncated run.
    """
    beta, xi, eta, e = (np.asarray(v, dtype=float).ravel() for v in (beta, xi, eta, e))
    if beta.shape != (cs.p,) or any(v.shape != (cs.n,) for v in (xi, eta, e)):
        raise DataError("solution vectors do not match the constraint system")
    edges = np.concatenate([[0], np.cumsum(cs.sizes)])
    rows = [slice(int(edges[m]), int(edges[m + 1])) for m in range(cs.M)]
    X_diag = cs.C[cs.M * cs.p:, :cs.M * cs.p] if cs.ordering is Ordering.STANDARD \
        else cs.A[cs.M * cs.p:, :]
    d = [X_diag[r, m * cs.p:(m + 1) * cs.p].T @ e[r] for m, r in enumerate(rows)]
    lam = np.concatenate([-dm for dm in d] + [e])
    if cs.ordering is Ordering.STANDARD:
        bc = np.concatenate([eta] + [beta] * cs.M)
    else:
        bc = np.concatenate([xi, eta, beta])
    return np.concatenate([bc, lam])


# ---------------------------------------------------------------- recorded runs

@dataclass
class RecordedRun:
    history: List[np.ndarray]
    stop_index: int
    g_inf: np.ndarray
    fit: FitResult
    cs: ConstraintSystem
    gb: GBMatrices


def recorded_run(data: Dataset, weights, cfg: SolverConfig, limit_factor: float = 10.0,
                 part=None) -> RecordedRun:
    """Run a GB variant unclamped, keeping every iterate.

    The run continues to a ``limit_factor`` times tighter tolerance; its final
    iterate serves as the limit proxy and ``stop_index`` marks where the
    nominal tolerance would have stopped.
    """
    if not cfg.variant.is_gb:
        raise ParameterError("diagnostics apply to the GB variants")
    tight = SolverConfig(**{**cfg.__dict__, "tol": cfg.tol / limit_factor,
                            "clamp": False, "record_states": True})
    w = np.asarray(weights, dtype=float)
    scheme = build_scheme(data, w, tight, part=part)
    beta_norms: List[float] = []
    fit = run(scheme, data, PenaltySpec(PenaltyKind.WEIGHTED_L1, w), tight,
              callback=lambda k, sch: beta_norms.append(float(np.linalg.norm(sch.beta))))
    stop = len(fit.trace)
    for k, (rc, gap, nrm) in enumerate(zip(fit.trace.rel_change, fit.trace.consensus, beta_norms)):
        if rc <= cfg.tol and (cfg.consensus_tol is None or gap <= cfg.consensus_tol * max(1.0, nrm)):
            stop = k + 1
            break
    cs = constraints_for(data, cfg.M, scheme.ordering, cfg.tau, part=part)
    gb = build_gb_matrices(cs, cfg.mu, cfg.nu)
    return RecordedRun(fit.g_history, stop, fit.g_history[-1], fit, cs, gb)


# ---------------------------------------------------------------- trace files

def dump_trace(columns: Dict[str, Sequence[float]], path) -> None:
    """Write equal-length named columns as CSV with a header row."""
    names = list(columns)
    lengths = {len(columns[k]) for k in names}
    if len(lengths) > 1:
        raise DataError("trace columns have different lengths")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*(columns[k] for k in names)):
            w.writerow([repr(float(v)) for v in row])


def load_trace(path) -> Dict[str, List[float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        cols: Dict[str, List[float]] = {k: [] for k in names}
        for row in reader:
            for k, v in zip(names, row):
                cols[k].append(float(v))
    return cols
