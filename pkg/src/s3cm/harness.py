"""Experiment driver: references, Monte-Carlo replicas, rate fits and I/O."""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (ContractError, DomainError, NonFiniteError, ProblemSpec, RandomSource,
                   S3cmError, SmoothOracle, SolverState, fixed_point_residual)
from .schedules import ConstantSchedule, Schedule, schedule_from_descriptor
from .solvers import S3cmConfig, Trace, davis_yin_run, s3cm_run, smcm_run

TRACE_COLUMNS = ("n", "gamma", "objective", "dist_sq", "u_norm")


class ReferenceError(S3cmError, RuntimeError):
    """The deterministic reference run diverged or produced non-finite values."""


class FitError(S3cmError, ValueError):
    pass


# --------------------------------------------------------------------------
# Reference solutions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Reference:
    x: np.ndarray
    residual: float
    iters: int


def compute_reference(spec: ProblemSpec, iters: int = 100_000,
                      schedule: Optional[Schedule] = None) -> Reference:
    """Run the deterministic baseline and return its final ``x_g``.

    The default step is ``1/L``. The fixed-point residual is evaluated at
    ``iters/10`` and at the end; growth between the two is treated as
    divergence.
    """
    if not spec.h.has_exact_gradient:
        raise ContractError("compute_reference needs an exact gradient")
    if iters < 10:
        raise DomainError("compute_reference needs at least 10 iterations")
    if schedule is None:
        schedule = ConstantSchedule.default_for(spec.h.lipschitz)
    early = iters // 10
    try:
        tr = davis_yin_run(spec, schedule, iters, record_at=[early], keep_iterates=True)
    except NonFiniteError as exc:
        raise ReferenceError(f"reference run became non-finite: {exc}") from exc

    def residual(it):
        n = it["n"]
        gamma = float(tr.gamma[list(tr.n).index(n)])
        state = SolverState(x_f=it["x_f"], x_g=it["x_g"], u_g=(it["z"] - it["x_f"]) / gamma,
                            n=n, gamma=gamma)
        return fixed_point_residual(spec, state)

    by_n = {it["n"]: it for it in tr.iterates}
    r_early, r_final = residual(by_n[early]), residual(by_n[iters])
    if not math.isfinite(r_final) or (r_final > 10 * r_early and r_final > 1e-8):
        raise ReferenceError(f"fixed-point residual grew from {r_early:.3g} to {r_final:.3g}")
    return Reference(x=tr.x.copy(), residual=r_final, iters=iters)


def dist_sq_rel(x, x_ref, return_flag: bool = False):
    """``||x - x_ref||^2 / ||x_ref||^2``.

    For a zero reference the absolute squared distance is returned instead,
    with a warning; ``return_flag=True`` also returns whether the value is
    relative.
    """
    x = np.asarray(x, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    e = x - x_ref
    num = float(e @ e)
    den = float(x_ref @ x_ref)
    relative = den > 0
    if not relative:
        warnings.warn("zero reference; reporting absolute squared distance", RuntimeWarning)
    val = num / den if relative else num
    return (val, relative) if return_flag else val


# --------------------------------------------------------------------------
# Monte-Carlo
# --------------------------------------------------------------------------


SOLVERS = ("s3cm", "smcm", "deterministic")


def run_solver(spec: ProblemSpec, config: S3cmConfig, solver: str = "s3cm", reference=None,
               objective: Optional[Callable] = None) -> Trace:
    """Dispatch on solver name. ``smcm`` treats ``f`` and ``g`` as its two terms."""
    if solver == "s3cm":
        return s3cm_run(spec, config, reference=reference, objective=objective)
    if solver == "smcm":
        return smcm_run([spec.f, spec.g], spec.h, config, reference=reference,
                        objective=objective or spec.objective)
    if solver == "deterministic":
        if objective is not None:
            raise DomainError("the deterministic solver records the problem objective only")
        return davis_yin_run(spec, config.schedule, config.max_iters, reference=reference,
                             record_every=config.record_every, record_at=config.record_at)
    raise DomainError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


@dataclass
class McSummary:
    """Pointwise statistics over the successful replicas.

    ``mean``, ``min`` and ``max`` map a trace column name to an array aligned
    with ``n``. ``failures`` lists ``(stream_id, message)`` for replicas that
    aborted.
    """

    n: np.ndarray
    mean: Dict[str, np.ndarray]
    min: Dict[str, np.ndarray]
    max: Dict[str, np.ndarray]
    replicas: int
    stream_ids: List[int]
    failures: List[Tuple[int, str]] = field(default_factory=list)
    traces: List[Trace] = field(default_factory=list, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def succeeded(self) -> int:
        return self.replicas - len(self.failures)


def _replica(args):
    spec, config, solver, reference, objective = args
    try:
        return run_solver(spec, config, solver, reference, objective)
    except (S3cmError, FloatingPointError) as exc:
        return f"{type(exc).__name__}: {exc}"


def aggregate(traces: Sequence[Trace]) -> Tuple[np.ndarray, dict, dict, dict]:
    """Sequential reduce in replica order; recomputable from the stored traces."""
    if not traces:
        return np.array([], dtype=np.int64), {}, {}, {}
    n = traces[0].n
    for t in traces[1:]:
        if not np.array_equal(t.n, n):
            raise DomainError("replicas recorded different iterations")
    cols = [c for c in TRACE_COLUMNS[1:] if getattr(traces[0], c) is not None]
    mean, lo, hi = {}, {}, {}
    for c in cols:
        stack = np.stack([getattr(t, c) for t in traces])
        lo[c] = stack.min(axis=0)
        hi[c] = stack.max(axis=0)
        # the mean of identical values can round one ulp outside [min, max]
        mean[c] = np.clip(stack.mean(axis=0), lo[c], hi[c])
    return n, mean, lo, hi


def monte_carlo(spec: ProblemSpec, config: S3cmConfig, replicas: int, base_seed: int,
                reference=None, solver: str = "s3cm", objective: Optional[Callable] = None,
                workers: int = 1, stream_ids: Optional[Sequence[int]] = None) -> McSummary:
    """Run independent replicas on streams ``base_seed + k`` of ``config.rng.seed``.

    Results do not depend on `workers`: each replica owns its generator and
    aggregation walks the replicas in index order. `stream_ids` overrides the
    default streams (used to force identical replicas in tests).
    """
    if replicas < 1:
        raise DomainError("replicas must be at least 1")
    ids = list(stream_ids) if stream_ids is not None else [base_seed + k for k in range(replicas)]
    if len(ids) != replicas:
        raise DomainError("need one stream id per replica")
    jobs = [(spec, replace(config, rng=RandomSource(config.rng.seed, sid)), solver, reference,
             objective) for sid in ids]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replica, jobs))
    else:
        results = [_replica(j) for j in jobs]
    traces, failures = [], []
    for sid, res in zip(ids, results):
        if isinstance(res, str):
            failures.append((sid, res))
        else:
            traces.append(res)
    n, mean, lo, hi = aggregate(traces)
    meta = {"seed": config.rng.seed, "base_seed": base_seed, "solver": solver,
            "schedule": config.schedule.describe(), "problem": spec.describe()}
    return McSummary(n=n, mean=mean, min=lo, max=hi, replicas=replicas, stream_ids=ids,
                     failures=failures, traces=traces, meta=meta)


# --------------------------------------------------------------------------
# Rates
# --------------------------------------------------------------------------


def loglog_slope(n, values, window: Optional[Tuple[float, float]] = None) -> float:
    """OLS slope of ``log(values)`` against ``log(n)`` over ``window``.

    The default window is the last decade, ``[n_max / 10, n_max]``.
    """
    n = np.asarray(n, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if window is None:
        top = float(np.max(n))
        window = (top / 10.0, top)
    sel = (n >= window[0]) & (n <= window[1]) & (n > 0)
    if sel.sum() < 10:
        raise FitError(f"need at least 10 points in window {window}, have {int(sel.sum())}")
    y = values[sel]
    if not np.all(y > 0) or not np.all(np.isfinite(y)):
        raise FitError("metric must be positive and finite inside the fit window")
    return float(np.polyfit(np.log(n[sel]), np.log(y), 1)[0])


def fit_rate(source, metric: str = "dist_sq", window: Optional[Tuple[float, float]] = None) -> float:
    """Fitted power-law exponent of `metric` for an :class:`McSummary` (its mean) or a Trace."""
    if isinstance(source, McSummary):
        if metric not in source.mean:
            raise FitError(f"summary has no {metric!r} column")
        return loglog_slope(source.n, source.mean[metric], window)
    if isinstance(source, Trace):
        return loglog_slope(source.n, source.column(metric), window)
    raise TypeError("fit_rate expects an McSummary or a Trace")


@dataclass
class VarianceReport:
    n: np.ndarray
    variance: np.ndarray        # mean squared deviation of the estimate at each point
    cumulative: np.ndarray      # trapezoid estimate of the running sum over iterations
    exponent: float             # fitted growth exponent t of the running sum
    superlinear: bool

    @property
    def spread(self) -> float:
        lo = float(np.min(self.variance))
        return math.inf if lo == 0 else float(np.max(self.variance)) / lo


def variance_monitor(oracle: SmoothOracle, points: Sequence[Tuple[int, np.ndarray]],
                     draws: int = 100, seed: int = 0, tol: float = 0.2) -> VarianceReport:
    """Empirical ``E||r - grad h||^2`` at sampled iterates.

    `points` holds ``(n, x)`` pairs in increasing ``n``. The running sum over
    iterations is estimated by the trapezoid rule and its log-log growth
    exponent ``t`` is fitted; ``t > 1 + tol`` is flagged as superlinear.
    """
    if not oracle.has_exact_gradient:
        raise ContractError("variance_monitor needs an exact gradient")
    rng = np.random.default_rng(seed)
    ns = np.array([int(n) for n, _ in points], dtype=np.float64)
    var = np.empty(len(points))
    for j, (_, x) in enumerate(points):
        g = oracle.gradient(x)
        acc = 0.0
        for _ in range(draws):
            e = oracle.stochastic_gradient(x, rng) - g
            acc += float(e @ e)
        var[j] = acc / draws
    # sum over iterations 1..n, piecewise linear between samples
    steps = np.diff(np.concatenate([[0.0], ns]))
    left = np.concatenate([[var[0]], var[:-1]])
    cumulative = np.cumsum(0.5 * (left + var) * steps)
    if np.all(cumulative == 0):
        exponent = 0.0
    else:
        sel = (ns > 0) & (cumulative > 0)
        half = sel & (ns >= np.median(ns[sel]))
        use = half if half.sum() >= 2 else sel
        exponent = float(np.polyfit(np.log(ns[use]), np.log(cumulative[use]), 1)[0])
    return VarianceReport(n=ns.astype(np.int64), variance=var, cumulative=cumulative,
                          exponent=exponent, superlinear=exponent > 1 + tol)


# --------------------------------------------------------------------------
# Trace checks and serialisation
# --------------------------------------------------------------------------


def schedule_mismatch(trace: Trace) -> float:
    """Max relative gap between recorded steps and the schedule rebuilt from ``meta``."""
    sched = schedule_from_descriptor(trace.meta["schedule"])
    expected = sched.sequence(int(trace.n[-1]))[trace.n]
    return float(np.max(np.abs(trace.gamma - expected) / expected))


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_trace_csv(trace: Trace, path) -> None:
    """Header ``n,gamma,objective,dist_sq,u_norm``; floats in round-trip form."""
    dist = trace.dist_sq if trace.dist_sq is not None else np.full(trace.n.size, np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(trace.n, trace.gamma, trace.objective, dist, trace.u_norm):
            w.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])


def write_summary_csv(summary: McSummary, path) -> None:
    """Mean trace of a Monte-Carlo run in the trace CSV layout."""
    mean = summary.mean
    t = Trace(n=summary.n, gamma=mean.get("gamma"), objective=mean.get("objective"),
              dist_sq=mean.get("dist_sq"), u_norm=mean.get("u_norm"))
    write_trace_csv(t, path)


def read_trace_csv(path) -> Trace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise DomainError(f"{path}: not a trace file")
    body = rows[1:]
    n = np.array([int(r[0]) for r in body], dtype=np.int64)
    cols = [np.array([float(r[k]) if r[k] else np.nan for r in body]) for k in range(1, 5)]
    dist = cols[2] if body and not np.all(np.isnan(cols[2])) else None
    return Trace(n=n, gamma=cols[0], objective=cols[1], dist_sq=dist, u_norm=cols[3])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
