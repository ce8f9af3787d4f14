"""Problem builders, data loaders and synthetic generators.

Two applications are covered: a constrained least-squares portfolio model
(simplex plus a minimum-return halfspace) and the dual of a kernel SVM (box
plus a single linear equality). Both are finite sums, so their gradient
oracles support unbiasedness checks.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .core import (DomainError, Indicator, KernelQuadraticOracle, LeastSquaresOracle,
                   ProblemSpec, S3cmError, as_vector)
from .prox import BoxSet, HalfspaceSet, HyperplaneSet, SimplexSet
from .schedules import ConstantSchedule
from .solvers import davis_yin_run

MISSING_MARKERS = ("", "nan")


class DataError(S3cmError):
    """Problem with input data (files, labels, missing values)."""


class ParseError(DataError, ValueError):
    """Malformed input file. ``line`` is 1-based; ``column`` is 1-based or None."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None,
                 path: Optional[str] = None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.column = column
        self.path = path


class ImputationError(DataError, ValueError):
    pass


# --------------------------------------------------------------------------
# Returns matrices
# --------------------------------------------------------------------------


@dataclass
class ReturnsMatrix:
    """Daily returns: one row per day, one column per asset."""

    values: np.ndarray
    columns: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.size == 0:
            raise DomainError("returns must be a non-empty 2-d array")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("returns contain missing or non-finite entries")
        if self.columns is not None:
            self.columns = tuple(self.columns)
            if len(self.columns) != self.d:
                raise DomainError("column names do not match the number of assets")

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def a_av(self) -> np.ndarray:
        """Average return of each asset."""
        return self.values.mean(axis=0)

    def subset(self, rows) -> "ReturnsMatrix":
        return ReturnsMatrix(self.values[rows], self.columns)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_returns_table(path, delimiter: str = ","):
    """Parse a returns CSV into ``(header or None, values)`` with NaN for missing cells.

    The first row is a header when any of its cells is neither a number nor a
    missing marker.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    # csv.reader yields [] for blank lines; keep the physical line numbers
    numbered = [(i + 1, r) for i, r in enumerate(rows) if r]
    if not numbered:
        raise ParseError("empty file", path=str(path))
    header = None
    first_line, first = numbered[0]
    if any(not _is_number(c.strip()) and c.strip().lower() not in MISSING_MARKERS for c in first):
        header = tuple(c.strip() for c in first)
        numbered = numbered[1:]
        if not numbered:
            raise ParseError("header but no data rows", line=first_line, path=str(path))
    width = len(header) if header is not None else len(numbered[0][1])
    values = np.empty((len(numbered), width))
    for r, (line, row) in enumerate(numbered):
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", line=line, path=str(path))
        for c, cell in enumerate(row):
            cell = cell.strip()
            if cell.lower() in MISSING_MARKERS:
                values[r, c] = np.nan
                continue
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", line=line, column=c + 1,
                                 path=str(path)) from None
            if not math.isfinite(values[r, c]):
                raise ParseError(f"non-finite cell {cell!r}", line=line, column=c + 1,
                                 path=str(path))
    return header, values


def load_returns_csv(path, delimiter: str = ",") -> ReturnsMatrix:
    """Load a returns CSV, filling any missing cells by nearest-neighbour imputation."""
    header, values = read_returns_table(path, delimiter)
    if np.isnan(values).any():
        values = impute_nearest_neighbor(values)
    return ReturnsMatrix(values, header)


def impute_nearest_neighbor(values) -> np.ndarray:
    """Fill NaN cells from the nearest complete row.

    Distance is Euclidean over the coordinates observed in the incomplete row
    (all of which a complete row also observes). Ties go to the lower row
    index.
    """
    X = np.array(values, dtype=np.float64)
    missing = np.isnan(X)
    if not missing.any():
        return X
    complete = np.flatnonzero(~missing.any(axis=1))
    if complete.size == 0:
        raise ImputationError("no complete row to impute from")
    C = X[complete]
    for r in np.flatnonzero(missing.any(axis=1)):
        obs = ~missing[r]
        diff = C[:, obs] - X[r, obs]
        dist = np.einsum("ij,ij->i", diff, diff)
        # argmin returns the first minimiser, i.e. the lowest row index
        X[r, missing[r]] = C[int(np.argmin(dist)), missing[r]]
    return X


def dump_returns_csv(returns: ReturnsMatrix, delimiter: str = ",") -> str:
    """Canonical text form: optional header, ``repr`` floats, ``\\n`` line ends."""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    if returns.columns is not None:
        writer.writerow(returns.columns)
    for row in returns.values:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def train_test_split(returns: ReturnsMatrix, test_fraction: float = 0.1, seed: int = 0):
    """Random disjoint split of the rows into ``(train, test)``."""
    if not 0 < test_fraction < 1:
        raise DomainError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(returns.p * test_fraction))
    if n_test == 0 or n_test == returns.p:
        raise DomainError(f"test_fraction {test_fraction} on {returns.p} rows leaves an "
                          "empty partition")
    perm = np.random.default_rng(seed).permutation(returns.p)
    test_rows, train_rows = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return returns.subset(train_rows), returns.subset(test_rows)


class PortfolioLoss:
    """``x -> (1/p) sum_i (a_i^T x - b)^2`` on the given rows, e.g. a held-out partition.

    A class rather than a closure so it can be sent to worker processes.
    """

    def __init__(self, returns: ReturnsMatrix, b_return: float):
        self.A = returns.values
        self.b = float(b_return)

    def __call__(self, x) -> float:
        r = self.A @ x - self.b
        return float(r @ r) / self.A.shape[0]


def build_portfolio_problem(returns: ReturnsMatrix, b_return: Optional[float] = None) -> ProblemSpec:
    """Least-squares tracking of a target return over the simplex.

    ``h(x) = (1/p) sum_i (a_i^T x - b)^2``, ``g`` the simplex indicator and
    ``f`` the indicator of ``a_av^T x >= b``. `b_return` defaults to the mean
    of ``a_av``.
    """
    if returns.d < 2:
        raise DomainError("a portfolio needs at least two assets")
    a_av = returns.a_av
    b = float(np.mean(a_av)) if b_return is None else float(b_return)
    h = LeastSquaresOracle(returns.values, np.full(returns.p, b))
    return ProblemSpec(h=h, f=Indicator(HalfspaceSet(a_av, b)), g=Indicator(SimplexSet(1.0)),
                       dim=returns.d, meta={"problem": "portfolio", "b_return": b,
                                            "rows": returns.p})


def portfolio_toy() -> ReturnsMatrix:
    """Two assets, four days.

    With ``b = mean(a_av) = 0.6`` the unconstrained best mix on the simplex
    puts 0.4747 on the first asset, so the return constraint binds and the
    optimum is ``(0.5, 0.5)``.
    """
    return ReturnsMatrix(np.array([[1.0, 0.2], [0.6, 0.4], [1.2, 0.1], [0.8, 0.5]]),
                         ("A", "B"))


# --------------------------------------------------------------------------
# Kernel SVM dual
# --------------------------------------------------------------------------


@dataclass
class KernelProblem:
    """``M_ij = exp(-sigma ||a_i - a_j||^2) b_i b_j`` plus the box bound ``C``."""

    M: np.ndarray
    labels: np.ndarray
    C: float
    sigma: float


def _check_labels(labels) -> np.ndarray:
    labels = as_vector(labels, "labels")
    if not np.all((labels == 1.0) | (labels == -1.0)):
        raise DomainError("labels must be +1 or -1")
    return labels


def kernel_problem(features, labels, C: float = 1.0, sigma: float = 0.25) -> KernelProblem:
    X = np.asarray(features, dtype=np.float64)
    labels = _check_labels(labels)
    if X.ndim != 2 or X.shape[0] != labels.size:
        raise DomainError(f"features {X.shape} do not match {labels.size} labels")
    if not C > 0 or not sigma > 0:
        raise DomainError("C and sigma must be positive")
    # pdist/squareform give an exactly symmetric matrix with a zero diagonal
    K = np.exp(-sigma * squareform(pdist(X, "sqeuclidean")))
    return KernelProblem(M=K * np.outer(labels, labels), labels=labels, C=float(C),
                         sigma=float(sigma))


def build_svm_dual(features, labels, C: float = 1.0, sigma: float = 0.25) -> ProblemSpec:
    """Dual soft-margin SVM with a Gaussian kernel.

    ``h(x) = 0.5 x^T M x - sum(x)``, ``g`` the indicator of ``[0, C]^d`` and
    ``f`` the indicator of ``labels^T x = 0``. The gradient estimate samples a
    single kernel column.
    """
    kp = kernel_problem(features, labels, C, sigma)
    d = kp.labels.size
    return ProblemSpec(h=KernelQuadraticOracle(kp.M), f=Indicator(HyperplaneSet(kp.labels, 0.0)),
                       g=Indicator(BoxSet(0.0, kp.C)), dim=d,
                       meta={"problem": "svm", "C": kp.C, "sigma": kp.sigma})


_LABELS = {"+1": 1.0, "1": 1.0, "-1": -1.0}


def load_sparse_classification(path, dim: Optional[int] = None):
    """Read ``label idx:val idx:val ...`` lines (1-based indices).

    Returns ``(features, labels)`` as a dense ``(n, dim)`` array and a ±1
    vector. Without `dim` the width is the largest index seen. Blank lines
    are skipped.
    """
    path = Path(path)
    labels, entries = [], []
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] not in _LABELS:
                raise ParseError(f"label {tokens[0]!r} is not +1 or -1", line=lineno, path=str(path))
            row = {}
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    k, v = int(idx), float(val)
                except ValueError:
                    raise ParseError(f"malformed token {tok!r}", line=lineno, path=str(path)) from None
                if k < 1 or (dim is not None and k > dim):
                    raise ParseError(f"index {k} out of range", line=lineno, path=str(path))
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value in {tok!r}", line=lineno, path=str(path))
                row[k] = v
                max_idx = max(max_idx, k)
            labels.append(_LABELS[tokens[0]])
            entries.append(row)
    if not labels:
        raise ParseError("no examples", path=str(path))
    width = dim if dim is not None else max_idx
    X = np.zeros((len(labels), width))
    for r, row in enumerate(entries):
        for k, v in row.items():
            X[r, k - 1] = v
    return X, np.array(labels)


def dump_sparse_classification(features, labels) -> str:
    """Canonical text form: ``+1``/``-1`` labels, increasing indices, nonzeros only."""
    lines = []
    for x, y in zip(np.asarray(features, dtype=np.float64), _check_labels(labels)):
        toks = ["+1" if y > 0 else "-1"]
        toks += [f"{k + 1}:{float(x[k])!r}" for k in np.flatnonzero(x)]
        lines.append(" ".join(toks))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Synthetic generators
# --------------------------------------------------------------------------


def synth_three_composite(dim: int, p: int, seed: int, condition: float = 1.0, mu: float = 1.0,
                          ref_iters: int = 100_000):
    """Least squares over the simplex with a binding halfspace.

    The Hessian ``(2/p) A^T A`` has eigenvalues spread geometrically over
    ``[mu, mu * condition]``. Returns ``(spec, x_ref)`` where ``x_ref`` comes
    from ``ref_iters`` deterministic baseline iterations with step ``1/L``.
    Results are memoised per argument tuple since the reference run is the
    expensive part.
    """
    spec, x_ref = _synth_cached(int(dim), int(p), int(seed), float(condition), float(mu),
                                int(ref_iters))
    return spec, x_ref.copy()


@functools.lru_cache(maxsize=16)
def _synth_cached(dim, p, seed, condition, mu, ref_iters):
    if dim < 2 or dim > 100:
        raise DomainError(f"dim must lie in [2, 100], got {dim}")
    if p < dim:
        raise DomainError("need p >= dim rows for a strongly convex least-squares term")
    if not condition >= 1 or not mu > 0:
        raise DomainError("need condition >= 1 and mu > 0")
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.normal(size=(p, dim)))
    V, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    lam = mu * condition ** (np.arange(dim) / (dim - 1))
    A = (U * np.sqrt(lam * p / 2.0)) @ V.T
    center = rng.normal(size=dim) / np.sqrt(dim) + 1.0 / dim
    # residual orthogonal to range(A) so the gradient noise does not vanish at the optimum
    e = rng.normal(size=p)
    e -= U @ (U.T @ e)
    y = A @ center
    if p > dim:
        y = y + e * (np.sqrt(p) / np.linalg.norm(e))
    a = rng.normal(size=dim)
    # halfway between the average and the best asset: feasible on the simplex,
    # and violated near the uniform point
    b = float(a.mean() + 0.5 * (a.max() - a.mean()))
    h = LeastSquaresOracle(A, y)
    spec = ProblemSpec(h=h, f=Indicator(HalfspaceSet(a, b)), g=Indicator(SimplexSet(1.0)),
                       dim=dim, meta={"problem": "synthetic", "seed": seed, "p": p,
                                      "condition": condition, "mu": mu})
    x_ref = davis_yin_run(spec, ConstantSchedule.default_for(h.lipschitz), ref_iters).x
    return spec, x_ref


def synth_svm_data(d: int, n_features: int, seed: int, separation: float = 0.5):
    """Two Gaussian clouds in ``n_features`` dimensions with ±1 labels.

    With ``n_features`` much smaller than ``d`` the kernel matrix is close to
    singular, so ``h`` is not usefully strongly convex.
    """
    if d < 2 or n_features < 1:
        raise DomainError("need d >= 2 and n_features >= 1")
    rng = np.random.default_rng(seed)
    labels = np.where(rng.random(d) < 0.5, -1.0, 1.0)
    X = rng.normal(size=(d, n_features)) + separation * labels[:, None]
    return X, labels
