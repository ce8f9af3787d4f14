"""Command-line front end.

Subcommands::

    s3cm run --config exp.ini [--out-dir DIR] [--seed N] [--verbose]
    s3cm prox-check [--verbose]
    s3cm rates --config rates.ini [--out-dir DIR] [--seed N]

Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 data
error, 4 numerical failure.

Config files use INI sections. Every key is optional; the defaults are
listed in :data:`DEFAULTS`. Keys whose default is the empty string are
derived from the problem (``mu_h`` and ``L``) or disabled (data paths).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import DomainError, NonFiniteError, RandomSource
from .harness import (FitError, ReferenceError, SOLVERS, compute_reference, fit_rate,
                      monte_carlo, write_summary_csv, write_summary_json, write_trace_csv)
from .problems import (DataError, PortfolioLoss, build_portfolio_problem, build_svm_dual,
                       load_returns_csv, load_sparse_classification, synth_svm_data,
                       synth_three_composite, train_test_split)
from .prox import prox_check_suite
from .schedules import (ConstantSchedule, PolynomialSchedule, ScheduleError, Theorem1Schedule)
from .solvers import EXACT, STOCHASTIC, S3cmConfig, log_spaced

log = logging.getLogger("s3cm")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

DEFAULTS = {
    "problem": {
        "kind": "synthetic",          # synthetic | portfolio | svm
        "dim": "20",                  # synthetic: number of variables
        "rows": "200",                # synthetic: least-squares rows
        "seed": "0",                  # synthetic / svm generator seed
        "condition": "1.0",           # synthetic: Hessian eigenvalue ratio
        "mu": "1.0",                  # synthetic: smallest Hessian eigenvalue
        "reference_iters": "100000",  # baseline iterations for x*_ref (0 disables dist_sq)
        "returns": "",                # portfolio: CSV path (required)
        "delimiter": ",",
        "b_return": "",               # portfolio: target return, default mean(a_av)
        "test_fraction": "0.1",       # portfolio: held-out rows; 0 records the train loss
        "split_seed": "0",
        "data": "",                   # svm: sparse file; empty uses a synthetic data set
        "features": "",               # svm: declared feature count, default max index
        "points": "200",              # svm synthetic: number of examples
        "svm_features": "5",          # svm synthetic: feature dimension
        "C": "1.0",
        "sigma": "0.25",
    },
    "solver": {
        "name": "s3cm",               # s3cm | smcm | deterministic
        "gradient": "stochastic",     # stochastic | exact
    },
    "schedule": {
        "kind": "",                   # theorem1 | polynomial | constant; default theorem1,
                                      # or polynomial for svm
        "gamma0": "1.0",
        "eta": "0.1",
        "mu_h": "",                   # default: the problem's strong convexity
        "mu_g": "0.0",
        "alpha": "1.0",
        "gamma": "",                  # constant: default 1/L
        "L": "",                      # constant: default the problem's Lipschitz constant
        "eps": "",                    # constant: default min(0.5/L, 0.5)
        "alpha_r": "0.9",
    },
    "run": {
        "iters": "1000",
        "replicas": "1",
        "seed": "0",
        "record_every": "1",
        "workers": "1",
        "trace": "trace.csv",
        "summary": "summary.json",
    },
    "rates": {
        "iters": "20000",
        "replicas": "5",
        "tolerance": "0.3",
        # alpha:beta pairs; gamma0 = beta / (2 mu_h)
        "cases": "0.5:0.2 1:2 1:1 1:0.5",
        "output": "rates.json",
    },
}


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# Config parsing
# --------------------------------------------------------------------------


@dataclass
class RunConfig:
    problem: dict
    solver: str
    gradient_mode: str
    schedule: dict
    iters: int
    replicas: int
    seed: int
    record_every: int
    workers: int
    trace: str
    summary: str
    rates: dict
    raw: dict


def _get(cp, section, key, conv=str):
    raw = cp.get(section, key, fallback=DEFAULTS[section][key]).strip()
    if conv is str:
        return raw
    if raw == "":
        return None
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {conv.__name__}") from None


def load_config(path: Optional[str], seed: Optional[int] = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
    for section in cp.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")

    kind = _get(cp, "problem", "kind")
    if kind not in ("synthetic", "portfolio", "svm"):
        raise ConfigError(f"[problem] kind must be synthetic, portfolio or svm, got {kind!r}")
    problem = {"kind": kind}
    for key, conv in (("dim", int), ("rows", int), ("seed", int), ("condition", float),
                      ("mu", float), ("reference_iters", int), ("b_return", float),
                      ("test_fraction", float), ("split_seed", int), ("features", int),
                      ("points", int), ("svm_features", int), ("C", float), ("sigma", float)):
        problem[key] = _get(cp, "problem", key, conv)
    for key in ("returns", "delimiter", "data"):
        problem[key] = _get(cp, "problem", key)
    if kind == "portfolio" and not problem["returns"]:
        raise ConfigError("[problem] returns is required for the portfolio problem")
    if problem["reference_iters"] < 0:
        raise ConfigError("[problem] reference_iters must be nonnegative")
    if not 0 <= problem["test_fraction"] < 1:
        raise ConfigError("[problem] test_fraction must lie in [0, 1)")

    solver = _get(cp, "solver", "name")
    if solver not in SOLVERS:
        raise ConfigError(f"[solver] name must be one of {', '.join(SOLVERS)}, got {solver!r}")
    mode = _get(cp, "solver", "gradient")
    if mode not in (STOCHASTIC, EXACT):
        raise ConfigError(f"[solver] gradient must be stochastic or exact, got {mode!r}")

    sched = {"kind": _get(cp, "schedule", "kind") or ("polynomial" if kind == "svm" else "theorem1")}
    if sched["kind"] not in ("theorem1", "polynomial", "constant"):
        raise ConfigError(f"[schedule] kind must be theorem1, polynomial or constant, "
                          f"got {sched['kind']!r}")
    for key in ("gamma0", "eta", "mu_h", "mu_g", "alpha", "gamma", "L", "eps", "alpha_r"):
        sched[key] = _get(cp, "schedule", key, float)
    for key in ("gamma0", "eta", "mu_g", "alpha", "alpha_r"):
        if sched[key] is None:
            raise ConfigError(f"[schedule] {key} must not be empty")
    # parameters that do not depend on the problem are checked now
    try:
        if sched["kind"] == "theorem1":
            Theorem1Schedule(sched["gamma0"], sched["eta"],
                             1.0 if sched["mu_h"] is None else sched["mu_h"], sched["mu_g"])
        elif sched["kind"] == "polynomial":
            PolynomialSchedule(sched["gamma0"], sched["alpha"])
        elif sched["L"] is not None:
            build_schedule(sched, None)
    except ScheduleError as exc:
        raise ConfigError(f"[schedule] {exc}") from None

    run = {k: _get(cp, "run", k, int) for k in ("iters", "replicas", "seed", "record_every",
                                                 "workers")}
    if seed is not None:
        run["seed"] = seed
    if run["iters"] < 1 or run["replicas"] < 1 or run["workers"] < 1:
        raise ConfigError("[run] iters, replicas and workers must be positive")
    if not 1 <= run["record_every"] <= run["iters"]:
        raise ConfigError("[run] record_every must lie in [1, iters]")
    if solver == "deterministic" and (mode != EXACT or run["replicas"] != 1):
        mode, run["replicas"] = EXACT, 1

    rates = {"iters": _get(cp, "rates", "iters", int), "replicas": _get(cp, "rates", "replicas", int),
             "tolerance": _get(cp, "rates", "tolerance", float),
             "output": _get(cp, "rates", "output")}
    try:
        rates["cases"] = [tuple(float(v) for v in c.split(":"))
                          for c in _get(cp, "rates", "cases").split()]
        if any(len(c) != 2 for c in rates["cases"]):
            raise ValueError
    except ValueError:
        raise ConfigError("[rates] cases must be space-separated alpha:beta pairs") from None

    raw = {s: dict(DEFAULTS[s]) | (dict(cp[s]) if cp.has_section(s) else {}) for s in DEFAULTS}
    return RunConfig(problem=problem, solver=solver, gradient_mode=mode, schedule=sched,
                     iters=run["iters"], replicas=run["replicas"], seed=run["seed"],
                     record_every=run["record_every"], workers=run["workers"],
                     trace=_get(cp, "run", "trace"), summary=_get(cp, "run", "summary"),
                     rates=rates, raw=raw)


def build_schedule(sched: dict, spec):
    """Instantiate the configured schedule; missing constants come from `spec`."""
    kind = sched["kind"]
    if kind == "theorem1":
        mu_h = sched["mu_h"] if sched["mu_h"] is not None else spec.h.strong_convexity
        return Theorem1Schedule(sched["gamma0"], sched["eta"], mu_h, sched["mu_g"])
    if kind == "polynomial":
        mu_h = sched["mu_h"] if sched["mu_h"] is not None else (
            spec.h.strong_convexity if spec is not None else None)
        return PolynomialSchedule(sched["gamma0"], sched["alpha"], mu_h)
    L = sched["L"] if sched["L"] is not None else spec.h.lipschitz
    if L is None or not L > 0:
        raise ScheduleError("constant schedule requires a known Lipschitz constant L > 0")
    gamma = sched["gamma"] if sched["gamma"] is not None else 1.0 / L
    eps = sched["eps"] if sched["eps"] is not None else min(0.5 / L, 0.5)
    return ConstantSchedule(gamma, L, eps, sched["alpha_r"])


def build_problem(problem: dict):
    """Returns ``(spec, reference or None, objective override or None)``."""
    kind = problem["kind"]
    if kind == "synthetic":
        ref_iters = problem["reference_iters"] or 10
        spec, x_ref = synth_three_composite(problem["dim"], problem["rows"], problem["seed"],
                                            problem["condition"], problem["mu"], ref_iters)
        return spec, (x_ref if problem["reference_iters"] else None), None
    if kind == "portfolio":
        path = Path(problem["returns"])
        if not path.is_file():
            raise DataError(f"returns file not found: {path}")
        returns = load_returns_csv(path, problem["delimiter"])
        objective = None
        if problem["test_fraction"] > 0:
            returns, test = train_test_split(returns, problem["test_fraction"],
                                             problem["split_seed"])
        spec = build_portfolio_problem(returns, problem["b_return"])
        if problem["test_fraction"] > 0:
            objective = PortfolioLoss(test, spec.meta["b_return"])
    else:
        if problem["data"]:
            path = Path(problem["data"])
            if not path.is_file():
                raise DataError(f"data file not found: {path}")
            X, labels = load_sparse_classification(path, problem["features"])
        else:
            X, labels = synth_svm_data(problem["points"], problem["svm_features"], problem["seed"])
        spec = build_svm_dual(X, labels, problem["C"], problem["sigma"])
        objective = None
    ref = compute_reference(spec, problem["reference_iters"]).x if problem["reference_iters"] else None
    return spec, ref, objective


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _setup(cfg: RunConfig):
    """Problem, schedule and reference; raises tagged errors for exit-code mapping."""
    try:
        spec, ref, objective = build_problem(cfg.problem)
    except (DataError, OSError, DomainError) as exc:
        raise _Tagged(EXIT_DATA, f"data error: {exc}") from exc
    try:
        schedule = build_schedule(cfg.schedule, spec)
    except ScheduleError as exc:
        raise _Tagged(EXIT_CONFIG, f"config error: [schedule] {exc}") from exc
    return spec, ref, objective, schedule


class _Tagged(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def cmd_run(cfg: RunConfig, out_dir: Path) -> int:
    spec, ref, objective, schedule = _setup(cfg)
    config = S3cmConfig(schedule, cfg.iters, rng=RandomSource(cfg.seed),
                        record_every=cfg.record_every, gradient_mode=cfg.gradient_mode)
    log.info("running %s on %s for %d iterations x %d replicas", cfg.solver,
             cfg.problem["kind"], cfg.iters, cfg.replicas)
    summary = monte_carlo(spec, config, cfg.replicas, cfg.seed, reference=ref, solver=cfg.solver,
                          objective=objective, workers=cfg.workers)
    if summary.succeeded == 0:
        raise _Tagged(EXIT_NUMERIC, f"numerical error: all replicas failed; "
                                    f"first: {summary.failures[0][1]}")
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path, summary_path = out_dir / cfg.trace, out_dir / cfg.summary
    if cfg.replicas == 1:
        write_trace_csv(summary.traces[0], trace_path)
    else:
        write_summary_csv(summary, trace_path)
    slope = None
    if "dist_sq" in summary.mean:
        try:
            slope = fit_rate(summary, "dist_sq")
        except FitError as exc:
            log.info("no rate fit: %s", exc)
    final = {f"{stat}_{col}": getattr(summary, stat)[col][-1]
             for stat in ("mean", "min", "max") for col in summary.mean}
    doc = {"config": cfg.raw, "replicas": summary.replicas, "succeeded": summary.succeeded,
           "stream_ids": summary.stream_ids, "seed": cfg.seed,
           "failures": [{"stream_id": s, "error": m} for s, m in summary.failures],
           "schedule": schedule.describe(), "problem": spec.describe(),
           "fitted_dist_sq_slope": slope, "final": final,
           "wall_time": [t.meta.get("wall_time") for t in summary.traces]}
    write_summary_json(doc, summary_path)
    print(f"wrote {trace_path} and {summary_path}")
    return EXIT_OK


def cmd_prox_check(verbose: bool, n_points: int = 1000, seed: int = 0) -> int:
    results = prox_check_suite(n_points=n_points, seed=seed)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{r.operator:<11} {r.prop:<17} {status}"
        if verbose:
            line += f"  max deviation {r.max_deviation:.3e}"
        print(line)
        if not r.passed:
            ok = False
            print(f"    counterexample: {np.array2string(r.counterexample, precision=6)}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_rates(cfg: RunConfig, out_dir: Path) -> int:
    if cfg.problem["kind"] != "synthetic":
        raise _Tagged(EXIT_CONFIG, "config error: rates needs [problem] kind = synthetic")
    if not cfg.problem["reference_iters"]:
        raise _Tagged(EXIT_CONFIG, "config error: rates needs reference_iters > 0")
    spec, ref, _, _ = _setup(cfg)
    mu = spec.h.strong_convexity
    if not mu > 0:
        raise _Tagged(EXIT_CONFIG, "config error: rates needs a strongly convex problem")
    iters, tol = cfg.rates["iters"], cfg.rates["tolerance"]
    record = log_spaced(iters, 20)
    rows, ok = [], True
    print(f"{'alpha':>6} {'beta':>6} {'predicted':>10} {'fitted':>8}  result")
    for alpha, beta in cfg.rates["cases"]:
        try:
            schedule = PolynomialSchedule(beta / (2.0 * mu), alpha, mu)
        except ScheduleError as exc:
            raise _Tagged(EXIT_CONFIG, f"config error: [rates] {exc}") from exc
        config = S3cmConfig(schedule, iters, rng=RandomSource(cfg.seed), record_at=record,
                            gradient_mode=STOCHASTIC)
        summary = monte_carlo(spec, config, cfg.rates["replicas"], cfg.seed, reference=ref)
        predicted = schedule.predicted_exponent()
        fitted = fit_rate(summary, "dist_sq")
        passed = abs(fitted - predicted) <= tol
        ok &= passed
        rows.append({"alpha": alpha, "beta": beta, "gamma0": schedule.gamma0,
                     "predicted": predicted, "fitted": fitted, "passed": passed})
        print(f"{alpha:6.2f} {beta:6.2f} {predicted:10.2f} {fitted:8.3f}  "
              f"{'PASS' if passed else 'FAIL'}")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_summary_json({"config": cfg.raw, "cases": rows, "tolerance": tol,
                        "problem": spec.describe()}, out_dir / cfg.rates["output"])
    return EXIT_OK if ok else EXIT_CHECK


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s3cm", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required):
        p.add_argument("--config", required=config_required, metavar="PATH",
                       help="INI experiment configuration")
        p.add_argument("--out-dir", default=".", metavar="PATH", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--verbose", action="store_true")

    common(sub.add_parser("run", help="run one experiment"), True)
    pc = sub.add_parser("prox-check", help="verify the projection operators")
    pc.add_argument("--verbose", action="store_true", help="print max deviations")
    pc.add_argument("--points", type=int, default=1000)
    pc.add_argument("--seed", type=int, default=0)
    common(sub.add_parser("rates", help="empirical rate table for polynomial schedules"), True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "prox-check":
        return cmd_prox_check(args.verbose, args.points, args.seed)
    try:
        cfg = load_config(args.config, args.seed)
        out_dir = Path(args.out_dir)
        if args.command == "run":
            return cmd_run(cfg, out_dir)
        return cmd_rates(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _Tagged as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except (NonFiniteError, ReferenceError, FitError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
