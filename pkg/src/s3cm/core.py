"""Problem model, oracles and solver state shared by every other module.

Vectors are plain 1-d ``float64`` numpy arrays. Subgradients are never
materialised: nonsmooth terms are only ever touched through ``prox``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class S3cmError(Exception):
    """Base class for errors raised by this package."""


class DomainError(S3cmError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class ContractError(S3cmError, RuntimeError):
    """A precondition on the problem (e.g. an exact gradient) is not met."""


class UnsupportedCheckError(S3cmError, TypeError):
    """A diagnostic was requested from an object that cannot support it."""


class NonFiniteError(S3cmError, FloatingPointError):
    """A NaN or Inf surfaced in solver state.

    Carries the name of the offending operation and the iteration index so
    that long Monte-Carlo runs can report where things went wrong.
    """

    def __init__(self, op: str, iteration: Optional[int] = None):
        self.op = op
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite value produced by {op}{where}")


def as_vector(x, name: str = "x") -> np.ndarray:
    """Return `x` as a finite 1-d float64 array (a copy is not guaranteed)."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1 or v.size == 0:
        raise DomainError(f"{name} must be a non-empty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"input {name}")
    return v


def all_finite(v: np.ndarray) -> bool:
    # A single reduction is cheaper than isfinite().all(); inf-inf and
    # overflow both surface as non-finite sums.
    return bool(np.isfinite(v.sum()))


@dataclass(frozen=True)
class RandomSource:
    """Seed plus stream id; each pair maps to one reproducible draw sequence."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        mask = (1 << 64) - 1
        seq = np.random.SeedSequence(self.seed & mask, spawn_key=(self.stream_id & mask,))
        return np.random.Generator(np.random.PCG64(seq))

    def spawn(self, stream_id: int) -> "RandomSource":
        return RandomSource(self.seed, stream_id)


# --------------------------------------------------------------------------
# Smooth term oracles
# --------------------------------------------------------------------------


class SmoothOracle:
    """Smooth term ``h`` with exact and/or stochastic gradient access.

    ``lipschitz`` and ``strong_convexity`` are ``None`` when unknown; zero is a
    legitimate known value, so it is never used as a sentinel.
    """

    dim: int
    lipschitz: Optional[float] = None
    strong_convexity: Optional[float] = None

    @property
    def has_exact_gradient(self) -> bool:
        return True

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise ContractError(f"{type(self).__name__} has no exact gradient")

    def stochastic_gradient(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"type": type(self).__name__, "dim": self.dim}


class FiniteSumOracle(SmoothOracle):
    """``h`` whose gradient is the average of ``n_components`` terms.

    The stochastic gradient samples one component index uniformly with
    replacement, so successive estimates are i.i.d. given the query point.
    """

    n_components: int

    def component_gradient(self, x: np.ndarray, i: int) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        acc = np.zeros(self.dim)
        for i in range(self.n_components):
            acc += self.component_gradient(x, i)
        return acc / self.n_components

    def stochastic_gradient(self, x, rng):
        return self.component_gradient(x, int(rng.integers(self.n_components)))


class LeastSquaresOracle(FiniteSumOracle):
    """``h(x) = (1/p) * sum_i (a_i^T x - y_i)^2`` over the rows of ``A``.

    One component gradient is ``2 (a_i^T x - y_i) a_i``; the exact gradient
    is ``(2/p) A^T (A x - y)``.
    """

    def __init__(self, A, y):
        A = np.ascontiguousarray(A, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if A.ndim != 2 or y.shape != (A.shape[0],):
            raise DomainError(f"incompatible shapes A{A.shape}, y{y.shape}")
        self.A = A
        self.y = y
        self.n_components, self.dim = A.shape
        eig = np.linalg.eigvalsh((2.0 / self.n_components) * (A.T @ A))
        self.lipschitz = float(max(eig[-1], 0.0))
        self.strong_convexity = float(max(eig[0], 0.0))

    def value(self, x):
        r = self.A @ x - self.y
        return float(r @ r) / self.n_components

    def gradient(self, x):
        return (2.0 / self.n_components) * (self.A.T @ (self.A @ x - self.y))

    def component_gradient(self, x, i):
        a = self.A[i]
        return (2.0 * (a @ x - self.y[i])) * a

    def describe(self):
        return {"type": "least_squares", "dim": self.dim, "rows": self.n_components}


class KernelQuadraticOracle(FiniteSumOracle):
    """``h(x) = 0.5 x^T M x - sum(x)`` with column-sampled gradient estimates.

    The estimate ``d * M[:, i] * x[i] - 1`` reads a single column of ``M``
    (O(d) work) while the exact gradient ``M x - 1`` reads all ``d`` columns.
    ``columns_touched`` counts column reads so the asymmetry is observable.
    """

    def __init__(self, M):
        M = np.ascontiguousarray(M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DomainError(f"kernel matrix must be square, got {M.shape}")
        self.M = M
        self.dim = self.n_components = M.shape[0]
        eig = np.linalg.eigvalsh(M)
        self.lipschitz = float(max(eig[-1], 0.0))
        # round-off can push the smallest eigenvalue of a PSD matrix below 0
        self.strong_convexity = float(max(eig[0], 0.0))
        self.columns_touched = 0

    def value(self, x):
        return 0.5 * float(x @ (self.M @ x)) - float(x.sum())

    def gradient(self, x):
        self.columns_touched += self.dim
        return self.M @ x - 1.0

    def component_gradient(self, x, i):
        self.columns_touched += 1
        # M is symmetric, so row i is column i and is contiguous in memory
        return self.M[i] * (self.dim * x[i]) - 1.0

    def describe(self):
        return {"type": "kernel_quadratic", "dim": self.dim}


class QuadraticOracle(SmoothOracle):
    """``h(x) = 0.5 (x - c)^T Q (x - c)`` with optional additive Gaussian noise.

    With ``noise == 0`` the stochastic gradient equals the exact gradient and
    consumes no randomness.
    """

    def __init__(self, Q, center=None, noise: float = 0.0):
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        self.Q = 0.5 * (Q + Q.T)
        self.dim = Q.shape[0]
        self.center = np.zeros(self.dim) if center is None else as_vector(center, "center")
        self.noise = float(noise)
        eig = np.linalg.eigvalsh(self.Q)
        self.lipschitz = float(max(eig[-1], 0.0))
        self.strong_convexity = float(max(eig[0], 0.0))

    def value(self, x):
        e = x - self.center
        return 0.5 * float(e @ (self.Q @ e))

    def gradient(self, x):
        return self.Q @ (x - self.center)

    def stochastic_gradient(self, x, rng):
        g = self.gradient(x)
        if self.noise:
            g = g + self.noise * rng.standard_normal(self.dim)
        return g

    def describe(self):
        return {"type": "quadratic", "dim": self.dim, "noise": self.noise}


# --------------------------------------------------------------------------
# Prox-capable terms
# --------------------------------------------------------------------------


class ProxTerm:
    """Nonsmooth term accessed only through its proximal operator.

    ``prox(x, gamma)`` returns ``argmin_z gamma*f(z) + 0.5||z - x||^2``.
    """

    dim: Optional[int] = None
    strong_convexity: float = 0.0
    is_indicator: bool = False

    def prox(self, x: np.ndarray, gamma: float) -> np.ndarray:
        raise NotImplementedError

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"type": type(self).__name__}


class Zero(ProxTerm):
    def prox(self, x, gamma):
        return x

    def value(self, x):
        return 0.0

    def describe(self):
        return {"type": "zero"}


class Indicator(ProxTerm):
    """Indicator of a closed convex set; prox is the projection, for any gamma."""

    is_indicator = True

    def __init__(self, convex_set, tol: float = 1e-9):
        self.set = convex_set
        self.tol = tol
        self.dim = getattr(convex_set, "dim", None)

    def prox(self, x, gamma):
        return self.set.project(x)

    def value(self, x):
        return 0.0 if self.set.contains(x, self.tol) else np.inf

    def describe(self):
        return {"type": "indicator", "set": self.set.describe()}


class Linear(ProxTerm):
    """``f(x) = c^T x``."""

    def __init__(self, c):
        self.c = as_vector(c, "c")
        self.dim = self.c.size

    def prox(self, x, gamma):
        return x - gamma * self.c

    def value(self, x):
        return float(self.c @ x)

    def describe(self):
        return {"type": "linear", "dim": self.dim}


class SquaredNorm(ProxTerm):
    """``f(x) = (mu/2) ||x||^2``, which is ``mu``-strongly convex."""

    def __init__(self, mu: float):
        if mu < 0:
            raise DomainError("mu must be nonnegative")
        self.strong_convexity = float(mu)

    def prox(self, x, gamma):
        return x / (1.0 + gamma * self.strong_convexity)

    def value(self, x):
        return 0.5 * self.strong_convexity * float(x @ x)

    def describe(self):
        return {"type": "squared_norm", "mu": self.strong_convexity}


@dataclass(frozen=True)
class ProblemSpec:
    """``minimize f(x) + g(x) + h(x)`` with ``h`` smooth and ``f``, ``g`` proximable."""

    h: SmoothOracle
    f: ProxTerm
    g: ProxTerm
    dim: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError("dim must be positive")
        for name, term in (("h", self.h), ("f", self.f), ("g", self.g)):
            d = getattr(term, "dim", None)
            if d is not None and d != self.dim:
                raise DomainError(f"term {name} has dim {d}, problem has dim {self.dim}")

    def objective(self, x: np.ndarray) -> float:
        """Smooth value plus the non-indicator nonsmooth terms.

        Indicator terms are left out: the recorded iterate ``x_g`` is feasible
        for ``g`` but generally not for ``f``, and ``+inf`` is useless in a trace.
        """
        val = self.h.value(x)
        for term in (self.f, self.g):
            if not term.is_indicator:
                val += term.value(x)
        return val

    def describe(self) -> dict:
        return {"h": self.h.describe(), "f": self.f.describe(), "g": self.g.describe(),
                "dim": self.dim, **self.meta}


@dataclass
class SolverState:
    """S3CM iterate triple at iteration ``n``; ``gamma`` is the step ``gamma_n``."""

    x_f: np.ndarray
    x_g: np.ndarray
    u_g: np.ndarray
    n: int
    gamma: float


def fixed_point_residual(spec: ProblemSpec, state: SolverState) -> float:
    """Distance of `state` from a fixed point of the deterministic iteration.

    Takes one exact-gradient step with ``gamma = state.gamma`` and returns
    ``||x_g' - x_g|| + ||x_f - x_g'|| + ||x_f' - x_f||``. The sum is zero exactly
    when the step maps the state onto itself.
    """
    if not spec.h.has_exact_gradient:
        raise ContractError("fixed_point_residual needs an exact gradient")
    gamma = state.gamma
    x_g = spec.g.prox(state.x_f + gamma * state.u_g, gamma)
    u = (state.x_f - x_g) / gamma + state.u_g
    x_f = spec.f.prox(x_g - gamma * u - gamma * spec.h.gradient(x_g), gamma)
    return float(np.linalg.norm(x_g - state.x_g) + np.linalg.norm(state.x_f - x_g)
                 + np.linalg.norm(x_f - state.x_f))


def check_unbiasedness(oracle: SmoothOracle, point) -> float:
    """Max-abs gap between the component-averaged estimate and the exact gradient."""
    if not isinstance(oracle, FiniteSumOracle):
        raise UnsupportedCheckError(
            f"{type(oracle).__name__} does not expose enumerable components")
    x = as_vector(point, "point")
    acc = np.zeros_like(x)
    for i in range(oracle.n_components):
        acc += oracle.component_gradient(x, i)
    return float(np.max(np.abs(acc / oracle.n_components - oracle.gradient(x))))

