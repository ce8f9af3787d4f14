"""Iteration engines.

``s3cm_run`` is the stochastic three-composite iteration. One loop body
reads

    x_g' = prox_{g_n g}(x_f + g_n u)
    u'   = (x_f - x_g') / g_n + u
    x_f' = prox_{g_{n+1} f}(x_g' - g_{n+1} u' - g_{n+1} r)

with ``r`` an unbiased gradient estimate drawn at ``x_g'``. Note the two step
sizes in one body: the runner keeps a one-step lookahead on the schedule.

``davis_yin_run`` is the deterministic baseline written in the usual
``z``-variable form, independent of the S3CM code so the two can be checked
against each other. ``smcm_run`` handles ``m`` nonsmooth terms by averaging
copies in the product space.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .core import (DomainError, NonFiniteError, ProblemSpec, ProxTerm, RandomSource,
                   SmoothOracle, SolverState, all_finite, as_vector)
from .schedules import Schedule

STOCHASTIC = "stochastic"
EXACT = "exact"


@dataclass
class S3cmConfig:
    schedule: Schedule
    max_iters: int
    rng: RandomSource = field(default_factory=lambda: RandomSource(0))
    record_every: int = 1
    gradient_mode: str = STOCHASTIC
    # explicit iteration indices to record instead of every `record_every`
    record_at: Optional[Sequence[int]] = None
    keep_iterates: bool = False

    def __post_init__(self):
        if self.max_iters < 0:
            raise DomainError("max_iters must be nonnegative")
        if self.record_every < 1:
            raise DomainError("record_every must be positive")
        if self.max_iters and self.record_every > self.max_iters:
            raise DomainError("record_every must not exceed max_iters")
        if self.gradient_mode not in (STOCHASTIC, EXACT):
            raise DomainError(f"gradient_mode must be '{STOCHASTIC}' or '{EXACT}'")

    def recording_mask(self) -> np.ndarray:
        mask = np.zeros(self.max_iters + 1, dtype=bool)
        if self.record_at is not None:
            idx = np.asarray(list(self.record_at), dtype=np.int64)
            mask[idx[(idx >= 0) & (idx <= self.max_iters)]] = True
        else:
            mask[:: self.record_every] = True
        mask[0] = mask[-1] = True
        return mask


def log_spaced(max_iters: int, per_decade: int = 20) -> np.ndarray:
    """Integer iteration indices spread evenly in ``log n`` up to `max_iters`."""
    if max_iters < 1:
        return np.array([0])
    pts = np.unique(np.round(np.logspace(0, np.log10(max_iters),
                                         int(per_decade * np.log10(max_iters)) + 2)))
    return np.concatenate([[0], pts.astype(np.int64)])


@dataclass
class Trace:
    """Recorded rows of one run plus metadata.

    Columns: iteration ``n``, step ``gamma`` (= ``g_n``), ``objective`` at the
    output iterate, optional ``dist_sq`` (squared relative distance to a
    reference) and ``u_norm``. With ``keep_iterates`` the recorded vectors are
    kept in ``iterates`` as dicts.
    """

    n: np.ndarray
    gamma: np.ndarray
    objective: np.ndarray
    dist_sq: Optional[np.ndarray]
    u_norm: np.ndarray
    meta: dict = field(default_factory=dict)
    final: Optional[object] = None
    iterates: Optional[List[dict]] = None

    @property
    def x(self) -> np.ndarray:
        """The output iterate (``x_g`` for S3CM, ``x_bar`` for SmCM)."""
        return self.final.x_g if isinstance(self.final, SolverState) else self.final.x_bar

    def column(self, name: str) -> np.ndarray:
        col = getattr(self, name)
        if col is None:
            raise KeyError(f"trace has no {name!r} column")
        return col


class _Recorder:
    def __init__(self, config: S3cmConfig, objective, reference, keep):
        self.mask = config.recording_mask()
        self.objective = objective
        if reference is not None:
            reference = as_vector(reference, "reference")
            ref_sq = float(reference @ reference)
            self.ref_scale = ref_sq if ref_sq > 0 else 1.0
        self.reference = reference
        self.keep = keep
        self.rows = []
        self.iterates = [] if keep else None

    def __call__(self, n, gamma, x, u_norm, vectors):
        if not self.mask[n]:
            return
        if self.reference is not None:
            e = x - self.reference
            dist = float(e @ e) / self.ref_scale
        else:
            dist = np.nan
        self.rows.append((n, gamma, self.objective(x), dist, u_norm))
        if self.keep:
            self.iterates.append({k: v.copy() for k, v in vectors.items()} | {"n": n})

    def trace(self, meta, final) -> Trace:
        arr = np.array(self.rows, dtype=np.float64).reshape(-1, 5)
        return Trace(
            n=arr[:, 0].astype(np.int64), gamma=arr[:, 1], objective=arr[:, 2],
            dist_sq=arr[:, 3] if self.reference is not None else None, u_norm=arr[:, 4],
            meta=meta, final=final, iterates=self.iterates)


def _check(v, op, n):
    if not all_finite(v):
        raise NonFiniteError(op, n)


# --------------------------------------------------------------------------
# S3CM
# --------------------------------------------------------------------------


def s3cm_init(spec: ProblemSpec, x_f0, gamma0: float) -> SolverState:
    """``x_g = prox_{g0 g}(x_f0)``, ``u_g = (x_f0 - x_g) / g0``."""
    x_f = as_vector(x_f0, "x_f0").copy()
    if x_f.size != spec.dim:
        raise DomainError(f"x_f0 has dim {x_f.size}, problem has dim {spec.dim}")
    if not gamma0 > 0:
        raise DomainError("gamma0 must be positive")
    x_g = np.asarray(spec.g.prox(x_f, gamma0), dtype=np.float64)
    _check(x_g, "prox_g", 0)
    u_g = (x_f - x_g) / gamma0
    return SolverState(x_f=x_f, x_g=x_g, u_g=u_g, n=0, gamma=float(gamma0))


def s3cm_step(spec: ProblemSpec, state: SolverState, gamma_n: float, gamma_next: float,
              rng: Optional[np.random.Generator] = None, exact: bool = False) -> SolverState:
    """One S3CM loop body; the gradient estimate is taken at the new ``x_g``."""
    n = state.n + 1
    x_g = spec.g.prox(state.x_f + gamma_n * state.u_g, gamma_n)
    _check(x_g, "prox_g", n)
    u_g = (state.x_f - x_g) / gamma_n + state.u_g
    r = spec.h.gradient(x_g) if exact else spec.h.stochastic_gradient(x_g, rng)
    _check(r, "gradient", n)
    x_f = spec.f.prox(x_g - gamma_next * u_g - gamma_next * r, gamma_next)
    _check(x_f, "prox_f", n)
    return SolverState(x_f=x_f, x_g=x_g, u_g=u_g, n=n, gamma=gamma_next)


def s3cm_run(spec: ProblemSpec, config: S3cmConfig, x_f0=None, reference=None,
             objective: Optional[Callable[[np.ndarray], float]] = None) -> Trace:
    """Run S3CM for ``config.max_iters`` loop bodies; the output iterate is ``x_g``.

    `reference` enables the ``dist_sq`` column; `objective` overrides the
    recorded objective (e.g. a held-out test loss).
    """
    x_f0 = np.zeros(spec.dim) if x_f0 is None else x_f0
    sched = config.schedule.fresh()
    exact = config.gradient_mode == EXACT
    rng = None if exact else config.rng.generator()
    rec = _Recorder(config, objective or spec.objective, reference, config.keep_iterates)
    t0 = time.perf_counter()

    gamma = sched.gamma
    state = s3cm_init(spec, x_f0, gamma)
    rec(0, gamma, state.x_g, float(np.linalg.norm(state.u_g)),
        {"x_f": state.x_f, "x_g": state.x_g, "u_g": state.u_g})
    for _ in range(config.max_iters):
        gamma_next = sched.next_gamma()
        state = s3cm_step(spec, state, gamma, gamma_next, rng, exact)
        gamma = gamma_next
        if rec.mask[state.n]:
            rec(state.n, gamma, state.x_g, float(np.linalg.norm(state.u_g)),
                {"x_f": state.x_f, "x_g": state.x_g, "u_g": state.u_g})

    meta = {"solver": "s3cm", "gradient_mode": config.gradient_mode,
            "seed": config.rng.seed, "stream_id": config.rng.stream_id,
            "schedule": config.schedule.describe(), "problem": spec.describe(),
            "wall_time": time.perf_counter() - t0}
    return rec.trace(meta, state)


# --------------------------------------------------------------------------
# Deterministic baseline
# --------------------------------------------------------------------------


def davis_yin_run(spec: ProblemSpec, schedule: Schedule, max_iters: int, x_f0=None,
                  reference=None, record_every: int = 1, record_at=None,
                  keep_iterates: bool = False) -> Trace:
    """Deterministic three-operator splitting with exact gradients.

    Standard form with a variable step: ``x_g = prox_{g_n g}(z)``,
    ``x_f = prox_{g_{n+1} f}(x_g - s (z - x_g) - g_{n+1} grad h(x_g))`` and
    ``z <- x_f + s (z - x_g)`` where ``s = g_{n+1} / g_n``. For a constant step
    this is ``x_f = prox(2 x_g - z - g grad h(x_g))``, ``z <- z + x_f - x_g``.
    Started from ``z_0 = 2 x_f0 - prox_{g_0 g}(x_f0)``, it produces the same
    iterates as S3CM in exact-gradient mode.
    """
    config = S3cmConfig(schedule, max_iters, record_every=record_every, record_at=record_at,
                        gradient_mode=EXACT, keep_iterates=keep_iterates)
    x_f = np.zeros(spec.dim) if x_f0 is None else as_vector(x_f0, "x_f0").copy()
    sched = schedule.fresh()
    rec = _Recorder(config, spec.objective, reference, keep_iterates)
    t0 = time.perf_counter()

    gamma = sched.gamma
    x_g = spec.g.prox(x_f, gamma)
    u_g = (x_f - x_g) / gamma
    z = x_f + gamma * u_g
    rec(0, gamma, x_g, float(np.linalg.norm(u_g)), {"x_f": x_f, "x_g": x_g, "z": z})
    for n in range(1, max_iters + 1):
        gamma_next = sched.next_gamma()
        x_g = spec.g.prox(z, gamma)
        _check(x_g, "prox_g", n)
        # w = g_{n+1} u_{g,n+1}, since g_n u_{g,n+1} = z - x_g
        w = (gamma_next / gamma) * (z - x_g)
        x_f = spec.f.prox(x_g - w - gamma_next * spec.h.gradient(x_g), gamma_next)
        _check(x_f, "prox_f", n)
        z = x_f + w
        gamma = gamma_next
        u_g = w / gamma
        if rec.mask[n]:
            rec(n, gamma, x_g, float(np.linalg.norm(u_g)), {"x_f": x_f, "x_g": x_g, "z": z})

    meta = {"solver": "davis_yin", "gradient_mode": EXACT,
            "schedule": schedule.describe(), "problem": spec.describe(),
            "wall_time": time.perf_counter() - t0}
    return rec.trace(meta, SolverState(x_f=x_f, x_g=x_g, u_g=u_g, n=max_iters, gamma=gamma))


# --------------------------------------------------------------------------
# SmCM
# --------------------------------------------------------------------------


@dataclass
class SmcmState:
    x_f: np.ndarray   # (m, d): one row per nonsmooth term
    u: np.ndarray     # (m, d)
    x_bar: np.ndarray
    n: int
    gamma: float


def smcm_init(terms: Sequence[ProxTerm], x_f0_list, gamma0: float) -> SmcmState:
    x_f = np.array([as_vector(x, "x_f0") for x in x_f0_list], dtype=np.float64)
    if x_f.shape[0] != len(terms):
        raise DomainError(f"{len(terms)} terms but {x_f.shape[0]} initial points")
    x_bar = x_f.mean(axis=0)
    return SmcmState(x_f=x_f, u=(x_f - x_bar) / gamma0, x_bar=x_bar, n=0, gamma=float(gamma0))


def smcm_step(terms, h: SmoothOracle, state: SmcmState, gamma_n, gamma_next, rng=None,
              exact=False) -> SmcmState:
    """One product-space loop body; term ``i`` is prox'd as ``m * f_i``."""
    n = state.n + 1
    m = len(terms)
    x_bar = (state.x_f + gamma_n * state.u).mean(axis=0)
    u = (state.x_f - x_bar) / gamma_n + state.u
    r = h.gradient(x_bar) if exact else h.stochastic_gradient(x_bar, rng)
    _check(r, "gradient", n)
    x_f = np.empty_like(state.x_f)
    for i, term in enumerate(terms):
        x_f[i] = term.prox(x_bar - gamma_next * u[i] - gamma_next * r, gamma_next * m)
    _check(x_f, "prox_f_i", n)
    return SmcmState(x_f=x_f, u=u, x_bar=x_bar, n=n, gamma=gamma_next)


def smcm_run(terms: Sequence[ProxTerm], h: SmoothOracle, config: S3cmConfig,
             x_f0_list=None, reference=None,
             objective: Optional[Callable[[np.ndarray], float]] = None) -> Trace:
    """Run SmCM; the output iterate is ``x_bar``. ``u_norm`` is the norm of the stacked duals."""
    if not terms:
        raise DomainError("smcm_run needs at least one term")
    d = h.dim
    if x_f0_list is None:
        x_f0_list = [np.zeros(d)] * len(terms)
    sched = config.schedule.fresh()
    exact = config.gradient_mode == EXACT
    rng = None if exact else config.rng.generator()

    def default_objective(x):
        val = h.value(x)
        for t in terms:
            if not t.is_indicator:
                val += t.value(x)
        return val

    rec = _Recorder(config, objective or default_objective, reference, config.keep_iterates)
    t0 = time.perf_counter()
    gamma = sched.gamma
    state = smcm_init(terms, x_f0_list, gamma)
    rec(0, gamma, state.x_bar, float(np.linalg.norm(state.u)),
        {"x_f": state.x_f, "u": state.u, "x_bar": state.x_bar})
    for _ in range(config.max_iters):
        gamma_next = sched.next_gamma()
        state = smcm_step(terms, h, state, gamma, gamma_next, rng, exact)
        gamma = gamma_next
        if rec.mask[state.n]:
            rec(state.n, gamma, state.x_bar, float(np.linalg.norm(state.u)),
                {"x_f": state.x_f, "u": state.u, "x_bar": state.x_bar})
    meta = {"solver": "smcm", "m": len(terms), "gradient_mode": config.gradient_mode,
            "seed": config.rng.seed, "stream_id": config.rng.stream_id,
            "schedule": config.schedule.describe(), "wall_time": time.perf_counter() - t0}
    return rec.trace(meta, state)


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DualDiagnostic:
    max_norm: float
    growth_ratio: float   # max ||u|| over the second half / max over the first half

    @property
    def bounded(self) -> bool:
        return self.growth_ratio < 2.0


def bounded_dual_diagnostic(trace: Trace) -> DualDiagnostic:
    """Running max of ``||u_g||`` and whether it is still growing at the end."""
    u = trace.u_norm
    if u.size == 0:
        return DualDiagnostic(0.0, 1.0)
    half = max(u.size // 2, 1)
    first, second = float(np.max(u[:half])), float(np.max(u[half:])) if u.size > 1 else 0.0
    if first == 0.0:
        ratio = 1.0 if second == 0.0 else np.inf
    else:
        ratio = second / first
    return DualDiagnostic(float(np.max(u)), ratio)
