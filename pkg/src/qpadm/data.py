"""Synthetic benchmark data, libsvm/CSV ingestion and row-block partitioning."""

from __future__ import annotations

import csv
import gzip
import io
from dataclasses import dataclass
from typing import List, Optional, TextIO, Union

import numpy as np
from scipy.special import ndtr

from .core import DataError, Dataset, ParameterError, Task

# 1-based indices of the active covariates in the heteroscedastic model.
TRUE_SUPPORT = (6, 12, 15, 20)
HETERO_INDEX = 1


@dataclass(frozen=True)
class SynthSpec:
    n: int
    p: int
    seed: int = 0
    rho: float = 0.5

    def __post_init__(self):
        if self.p < 20:
            raise ParameterError(f"p must be >= 20 for the benchmark model, got {self.p}")
        if self.n < 1:
            raise ParameterError(f"n must be positive, got {self.n}")


@dataclass
class SynthData:
    dataset: Dataset
    beta_true: np.ndarray
    support: tuple = TRUE_SUPPORT
    hetero_index: int = HETERO_INDEX


def ar1_gaussian(rng: np.random.Generator, n: int, p: int, rho: float) -> np.ndarray:
    """Rows ~ N(0, Sigma) with Sigma_ij = rho^|i-j|, via the AR(1) recursion."""
    z = rng.standard_normal((n, p))
    x = np.empty_like(z)
    x[:, 0] = z[:, 0]
    s = np.sqrt(1.0 - rho ** 2)
    for j in range(1, p):
        x[:, j] = rho * x[:, j - 1] + s * z[:, j]
    return x


def quantile_beta_true(p: int, tau: float) -> np.ndarray:
    """Coefficients of the conditional tau-quantile under the benchmark model."""
    from scipy.stats import norm

    beta = np.zeros(p)
    for j in TRUE_SUPPORT:
        beta[j - 1] = 1.0
    beta[HETERO_INDEX - 1] = 0.7 * norm.ppf(tau)
    return beta


def synth_generate(spec: SynthSpec, tau: float = 0.7) -> SynthData:
    """Heteroscedastic model y = x6 + x12 + x15 + x20 + 0.7 x1 eps.

    x1 is replaced by Phi(x1~) after drawing the AR(1) design, so x1 lies in
    (0, 1). ``beta_true`` holds the conditional tau-quantile coefficients,
    which include 0.7 * Phi^{-1}(tau) on x1.
    """
    rng = np.random.default_rng(spec.seed)
    X = ar1_gaussian(rng, spec.n, spec.p, spec.rho)
    eps = rng.standard_normal(spec.n)
    X[:, 0] = ndtr(X[:, 0])
    y = X[:, [j - 1 for j in TRUE_SUPPORT]].sum(axis=1) + 0.7 * X[:, 0] * eps
    return SynthData(Dataset.regression(X, y), quantile_beta_true(spec.p, tau))


def synth_classification(spec: SynthSpec) -> SynthData:
    """Toy classification set: labels are the sign of the benchmark response."""
    reg = synth_generate(spec)
    labels = np.where(reg.dataset.y >= 0, 1.0, -1.0)
    beta = np.zeros(spec.p)
    for j in TRUE_SUPPORT:
        beta[j - 1] = 1.0
    return SynthData(Dataset.classification(reg.dataset.X, labels), beta)


# ---------------------------------------------------------------- partitioning

@dataclass(frozen=True)
class Partition:
    M: int
    sizes: tuple
    order: Optional[np.ndarray] = None

    @property
    def bounds(self) -> List[tuple]:
        edges = np.concatenate([[0], np.cumsum(self.sizes)])
        return [(int(edges[m]), int(edges[m + 1])) for m in range(self.M)]

    def split(self, A: np.ndarray) -> List[np.ndarray]:
        if self.order is not None:
            A = A[self.order]
        return [A[lo:hi] for lo, hi in self.bounds]


def partition(n: int, M: int, shuffle: bool = False, seed: int = 0) -> Partition:
    """Contiguous near-equal split; the first n % M blocks get one extra row."""
    if M < 1:
        raise ParameterError(f"M must be >= 1, got {M}")
    if M > n:
        raise DataError(f"cannot split {n} rows into {M} nonempty blocks")
    base, extra = divmod(n, M)
    sizes = tuple(base + (1 if m < extra else 0) for m in range(M))
    order = np.random.default_rng(seed).permutation(n) if shuffle else None
    return Partition(M, sizes, order)


# ---------------------------------------------------------------- libsvm

class ParseError(DataError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _open_text(source) -> TextIO:
    if hasattr(source, "read"):
        return source
    path = str(source)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, "r", encoding="utf-8")


_LABELS = {"+1": 1.0, "1": 1.0, "1.0": 1.0, "+1.0": 1.0,
           "-1": -1.0, "-1.0": -1.0, "0": -1.0, "0.0": -1.0}


def parse_libsvm(source, p: Optional[int] = None, intercept: bool = False) -> Dataset:
    """Read ``<label> <index>:<value> ...`` lines into a classification Dataset.

    Labels in {-1, +1} (or {0, 1}) are accepted; indices are 1-based and must
    be strictly increasing within a line. The label transform is applied on
    ingestion. ``source`` is a path (plain or gzip) or an open text stream.
    """
    fh = _open_text(source)
    labels, rows = [], []
    max_idx = 0
    try:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if tokens[0] not in _LABELS:
                raise ParseError(lineno, f"unknown label {tokens[0]!r}")
            feats = {}
            last = 0
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ParseError(lineno, f"malformed token {tok!r}")
                try:
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise ParseError(lineno, f"malformed token {tok!r}") from None
                if idx < 1:
                    raise ParseError(lineno, f"index must be >= 1, got {idx}")
                if idx <= last:
                    raise ParseError(lineno, f"indices not strictly increasing at {idx}")
                last = idx
                feats[idx] = val
            max_idx = max(max_idx, last)
            labels.append(_LABELS[tokens[0]])
            rows.append(feats)
    finally:
        if not hasattr(source, "read"):
            fh.close()
    if not rows:
        raise DataError("no samples in libsvm input")
    if p is None:
        p = max(max_idx, 1)
    elif max_idx > p:
        raise DataError(f"feature index {max_idx} exceeds requested dimension {p}")
    X = np.zeros((len(rows), p))
    for i, feats in enumerate(rows):
        for j, v in feats.items():
            X[i, j - 1] = v
    return Dataset.classification(X, np.array(labels), intercept=intercept)


def write_libsvm(data: Dataset, out: Union[str, TextIO]) -> None:
    """Write a classification dataset (raw features, +-1 labels)."""
    if data.task is not Task.CLASSIFICATION:
        raise DataError("libsvm output is for classification datasets")
    X = data.raw_features()
    if data.has_intercept:
        X = X[:, 1:]
    lines = []
    for lab, row in zip(data.labels, X):
        toks = [f"{j + 1}:{float(row[j])!r}" for j in np.flatnonzero(row)]
        lines.append(" ".join(["+1" if lab > 0 else "-1"] + toks))
    text = "\n".join(lines) + "\n"
    if hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------- CSV

def read_csv(source, header: Optional[bool] = None, intercept: bool = False) -> Dataset:
    """Dense regression CSV with the response in the last column.

    ``header=None`` sniffs: the first row is a header if any cell fails to
    parse as a float.
    """
    fh = open(source, "r", encoding="utf-8", newline="") if not hasattr(source, "read") else source
    try:
        rows = [r for r in csv.reader(fh) if r]
    finally:
        if not hasattr(source, "read"):
            fh.close()
    if not rows:
        raise DataError("empty CSV input")
    if header is None:
        try:
            [float(c) for c in rows[0]]
            header = False
        except ValueError:
            header = True
    if header:
        rows = rows[1:]
    try:
        A = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise DataError(f"non-numeric CSV cell: {exc}") from None
    if A.ndim != 2 or A.shape[1] < 2:
        raise DataError("CSV needs at least one feature column and a response column")
    return Dataset.regression(A[:, :-1], A[:, -1], intercept=intercept)


def write_csv(data: Dataset, out, header: bool = True) -> None:
    X = data.X[:, 1:] if data.has_intercept else data.X
    fh = open(out, "w", encoding="utf-8", newline="") if not hasattr(out, "write") else out
    try:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"x{j + 1}" for j in range(X.shape[1])] + ["y"])
        for row, yi in zip(X, data.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(yi))])
    finally:
        if not hasattr(out, "write"):
            fh.close()


def load_dataset(path: str, fmt: Optional[str] = None, **kw) -> Dataset:
    if fmt is None:
        stem = path[:-3] if path.endswith(".gz") else path
        fmt = "csv" if stem.endswith(".csv") else "libsvm"
    if fmt == "csv":
        return read_csv(path, **kw)
    return parse_libsvm(path, **kw)
