"""Euclidean projections used as proximal operators, plus a grid oracle.

Every projection is a pure function of its arguments. The set classes wrap
them so they can be handed to :class:`s3cm.core.Indicator`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DomainError, as_vector


def project_simplex(x, radius: float = 1.0) -> np.ndarray:
    """Project `x` onto ``{z >= 0, sum(z) = radius}`` by sort-and-threshold.

    O(d log d). The threshold is the same whatever order equal entries are
    sorted in; a stable sort keeps the computation itself deterministic.
    """
    if not radius > 0:
        raise DomainError(f"simplex radius must be positive, got {radius}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DomainError("project_simplex expects a non-empty 1-d vector")
    u = -np.sort(-x, kind="stable")
    css = np.cumsum(u) - radius
    k = np.arange(1, x.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(x - theta, 0.0)


def project_box(x, lo: float, hi: float) -> np.ndarray:
    if lo > hi:
        raise DomainError(f"empty box: lo={lo} > hi={hi}")
    return np.minimum(np.maximum(x, lo), hi)


def project_halfspace(x, a, b: float) -> np.ndarray:
    """Project onto ``{z : a^T z >= b}``; feasible points are returned unchanged."""
    a = np.asarray(a, dtype=np.float64)
    nrm2 = float(a @ a)
    if nrm2 == 0.0:
        raise DomainError("halfspace normal must be nonzero")
    gap = b - float(a @ x)
    if gap <= 0.0:
        return np.asarray(x, dtype=np.float64)
    return x + (gap / nrm2) * a


def project_hyperplane(x, b, c: float) -> np.ndarray:
    """Project onto ``{z : b^T z = c}``."""
    b = np.asarray(b, dtype=np.float64)
    nrm2 = float(b @ b)
    if nrm2 == 0.0:
        raise DomainError("hyperplane normal must be nonzero")
    return x - ((float(b @ x) - c) / nrm2) * b


# --------------------------------------------------------------------------
# Set objects
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SimplexSet:
    radius: float = 1.0
    dim: Optional[int] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"simplex radius must be positive, got {self.radius}")

    def project(self, x):
        return project_simplex(x, self.radius)

    def contains(self, x, tol: float = 1e-9) -> bool:
        return bool(np.all(x >= -tol) and abs(np.sum(x) - self.radius) <= tol * max(1.0, self.radius))

    def indicator(self, Z, tol: float = 1e-9):
        """Vectorised indicator over the rows of `Z` (0 or +inf)."""
        ok = np.all(Z >= -tol, axis=-1) & (np.abs(Z.sum(axis=-1) - self.radius) <= tol)
        return np.where(ok, 0.0, np.inf)

    def describe(self):
        return {"kind": "simplex", "radius": self.radius}


@dataclass(frozen=True)
class BoxSet:
    lo: float
    hi: float
    dim: Optional[int] = None

    def __post_init__(self):
        if self.lo > self.hi:
            raise DomainError(f"empty box: lo={self.lo} > hi={self.hi}")

    def project(self, x):
        return project_box(x, self.lo, self.hi)

    def contains(self, x, tol: float = 1e-9) -> bool:
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def indicator(self, Z, tol: float = 1e-9):
        ok = np.all((Z >= self.lo - tol) & (Z <= self.hi + tol), axis=-1)
        return np.where(ok, 0.0, np.inf)

    def describe(self):
        return {"kind": "box", "lo": self.lo, "hi": self.hi}


class HalfspaceSet:
    """``{z : a^T z >= b}``; tolerances scale with ``||a||``."""

    def __init__(self, a, b: float):
        self.a = as_vector(a, "a")
        self.b = float(b)
        self.norm = float(np.linalg.norm(self.a))
        if self.norm == 0.0:
            raise DomainError("halfspace normal must be nonzero")
        self.dim = self.a.size

    def project(self, x):
        return project_halfspace(x, self.a, self.b)

    def contains(self, x, tol: float = 1e-9) -> bool:
        return float(self.a @ x) >= self.b - tol * self.norm

    def indicator(self, Z, tol: float = 1e-9):
        return np.where(Z @ self.a >= self.b - tol * self.norm, 0.0, np.inf)

    def describe(self):
        return {"kind": "halfspace", "b": self.b, "dim": self.dim}


class HyperplaneSet:
    """``{z : b^T z = c}``; tolerances scale with ``||b||``."""

    def __init__(self, b, c: float = 0.0):
        self.b = as_vector(b, "b")
        self.c = float(c)
        self.norm = float(np.linalg.norm(self.b))
        if self.norm == 0.0:
            raise DomainError("hyperplane normal must be nonzero")
        self.dim = self.b.size

    def project(self, x):
        return project_hyperplane(x, self.b, self.c)

    def contains(self, x, tol: float = 1e-9) -> bool:
        return abs(float(self.b @ x) - self.c) <= tol * self.norm

    def indicator(self, Z, tol: float = 1e-9):
        return np.where(np.abs(Z @ self.b - self.c) <= tol * self.norm, 0.0, np.inf)

    def describe(self):
        return {"kind": "hyperplane", "c": self.c, "dim": self.dim}


# --------------------------------------------------------------------------
# Brute-force oracle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned search grid ``[lo, hi]^d`` resolved down to ``step``.

    A full grid at fine resolution is too large to enumerate, so the search
    zooms: each level scans at most ``points_per_axis`` points per axis, then
    narrows to a few cells around the best point and refines by 10x.
    """

    lo: float
    hi: float
    step: float
    points_per_axis: int = 401


def brute_force_prox(value_fn: Callable[[np.ndarray], np.ndarray], x, gamma: float,
                     grid: GridSpec) -> np.ndarray:
    """Minimise ``gamma*value_fn(z) + 0.5||z - x||^2`` over grid points.

    `value_fn` is evaluated on an ``(N, d)`` batch and returns ``N`` values.
    Every level's points sit on the lattice ``lo + k*step`` so that sets whose
    boundaries pass through lattice points are resolved to within one step.
    """
    x = as_vector(x)
    d = x.size
    if d > 3:
        raise DomainError(f"brute_force_prox supports dim <= 3, got {d}")
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    # number of levels: coarse spacing is step * 10**levels
    levels = 0
    while (grid.hi - grid.lo) / (grid.step * 10 ** levels) > grid.points_per_axis - 1:
        levels += 1
    unit = grid.step * 10 ** levels
    lo_k = np.zeros(d, dtype=np.int64)
    hi_k = np.full(d, int(np.floor((grid.hi - grid.lo) / unit + 1e-9)), dtype=np.int64)
    while True:
        axes = [grid.lo + unit * np.arange(lo_k[k], hi_k[k] + 1) for k in range(d)]
        Z = np.array(list(itertools.product(*axes))) if d > 1 else axes[0][:, None]
        obj = gamma * value_fn(Z) + 0.5 * np.sum((Z - x) ** 2, axis=1)
        best = Z[int(np.argmin(obj))]
        if levels == 0:
            return best
        best_k = np.rint((best - grid.lo) / unit).astype(np.int64) * 10
        unit /= 10
        levels -= 1
        top = int(np.floor((grid.hi - grid.lo) / unit + 1e-9))
        lo_k = np.maximum(best_k - 50, 0)
        hi_k = np.minimum(best_k + 50, top)


def zero_value(Z):
    return np.zeros(len(Z))


# --------------------------------------------------------------------------
# Property suite (used by the CLI and the acceptance tests)
# --------------------------------------------------------------------------


@dataclass
class CheckResult:
    operator: str
    prop: str
    passed: bool
    max_deviation: float
    counterexample: Optional[np.ndarray] = None


def _sample_feasible(name: str, s, rng, n, d):
    if name == "simplex":
        return rng.dirichlet(np.ones(d), size=n) * s.radius
    if name == "box":
        return rng.uniform(s.lo, s.hi, size=(n, d))
    Y = rng.normal(size=(n, d)) * 3
    return np.array([s.project(y) for y in Y])


def standard_sets(d: int, rng: np.random.Generator) -> dict:
    if d == 2:
        # boundaries pass through lattice points of any grid with step 1e-3
        a, b = np.array([1.0, 1.0]), np.array([1.0, -1.0])
    else:
        a, b = rng.normal(size=d), rng.normal(size=d)
    return {
        "simplex": SimplexSet(1.0),
        "box": BoxSet(0.0, 1.0),
        "halfspace": HalfspaceSet(a, 0.5),
        "hyperplane": HyperplaneSet(b, 0.3),
    }


def prox_check_suite(n_points: int = 1000, dim: int = 5, seed: int = 0,
                     n_oracle: int = 12, sets: Optional[Sequence[str]] = None) -> list:
    """Run idempotence, nonexpansiveness, obtuse-angle and grid-oracle checks.

    Returns one :class:`CheckResult` per (operator, property).
    """
    rng = np.random.default_rng(seed)
    results = []
    catalog = standard_sets(dim, rng)
    catalog2 = standard_sets(2, rng)
    names = list(sets) if sets else list(catalog)
    for name in names:
        s = catalog[name]
        X = rng.normal(size=(n_points, dim)) * 3
        Y = rng.normal(size=(n_points, dim)) * 3
        PX = np.array([s.project(x) for x in X])
        PY = np.array([s.project(y) for y in Y])

        idem = np.array([np.max(np.abs(s.project(p) - p)) for p in PX])
        k = int(np.argmax(idem))
        results.append(CheckResult(name, "idempotence", bool(idem[k] <= 1e-12), float(idem[k]), X[k]))

        excess = np.linalg.norm(PX - PY, axis=1) - np.linalg.norm(X - Y, axis=1)
        k = int(np.argmax(excess))
        results.append(CheckResult(name, "nonexpansiveness", bool(excess[k] <= 1e-12),
                                   float(max(excess[k], 0.0)), X[k]))

        worst, worst_x = -np.inf, None
        for x, p in zip(X[:100], PX[:100]):
            F = _sample_feasible(name, s, rng, 100, dim)
            v = float(np.max((F - p) @ (x - p)))
            if v > worst:
                worst, worst_x = v, x
        results.append(CheckResult(name, "obtuse_angle", worst <= 1e-10, max(worst, 0.0), worst_x))

        s2 = catalog2[name]
        grid = GridSpec(-4.0, 4.0, 1e-3)
        dev, dev_x = 0.0, None
        for x in rng.normal(size=(n_oracle, 2)) * 1.5:
            z = brute_force_prox(s2.indicator, x, 1.0, grid)
            e = float(np.max(np.abs(z - s2.project(x))))
            if e > dev:
                dev, dev_x = e, x
        results.append(CheckResult(name, "oracle_agreement", dev <= 1e-3, dev, dev_x))
    return results
