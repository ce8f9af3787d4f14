import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s3cm.core import (DomainError, Indicator, Linear, NonFiniteError, ProblemSpec,
                       QuadraticOracle, RandomSource, SmoothOracle, SolverState, Zero,
                       fixed_point_residual)
from s3cm.problems import build_portfolio_problem, portfolio_toy
from s3cm.prox import BoxSet, HalfspaceSet, SimplexSet
from s3cm.schedules import ConstantSchedule, PolynomialSchedule, Theorem1Schedule
from s3cm.solvers import (EXACT, STOCHASTIC, S3cmConfig, bounded_dual_diagnostic, davis_yin_run,
                          log_spaced, s3cm_init, s3cm_run, s3cm_step, smcm_init, smcm_run,
                          smcm_step)

TOY_OPT = np.array([0.5, 0.5])


def _quad(Q=None, c=None, noise=0.0):
    Q = np.eye(2) if Q is None else Q
    return QuadraticOracle(Q, c, noise)


# --------------------------------------------------------------------------
# init / step examples
# --------------------------------------------------------------------------


def test_init_with_zero_g():
    spec = ProblemSpec(_quad(), Zero(), Zero(), 2)
    st_ = s3cm_init(spec, [0.3, -2.0], 0.7)
    np.testing.assert_array_equal(st_.x_g, [0.3, -2.0])
    np.testing.assert_array_equal(st_.u_g, [0.0, 0.0])
    assert st_.n == 0 and st_.gamma == 0.7


def test_init_with_box_g():
    spec = ProblemSpec(_quad(), Zero(), Indicator(BoxSet(0.0, 1.0)), 2)
    st_ = s3cm_init(spec, [2.0, 2.0], 1.0)
    np.testing.assert_array_equal(st_.x_g, [1.0, 1.0])
    np.testing.assert_array_equal(st_.u_g, [1.0, 1.0])


def test_init_with_simplex_g():
    spec = ProblemSpec(_quad(), Zero(), Indicator(SimplexSet()), 2)
    st_ = s3cm_init(spec, [2.0, 0.0], 2.0)
    np.testing.assert_array_equal(st_.x_g, [1.0, 0.0])
    np.testing.assert_array_equal(st_.u_g, [0.5, 0.0])


def test_init_rejects_bad_input():
    spec = ProblemSpec(_quad(), Zero(), Zero(), 2)
    with pytest.raises(NonFiniteError):
        s3cm_init(spec, [np.inf, 0.0], 1.0)
    with pytest.raises(DomainError):
        s3cm_init(spec, [0.0, 0.0, 0.0], 1.0)


def test_step_reduces_to_gradient_descent():
    spec = ProblemSpec(_quad(), Zero(), Zero(), 2)
    st0 = s3cm_init(spec, [1.0, 0.0], 0.5)
    st1 = s3cm_step(spec, st0, 0.5, 0.5, exact=True)
    np.testing.assert_array_equal(st1.x_g, [1.0, 0.0])
    np.testing.assert_array_equal(st1.u_g, [0.0, 0.0])
    np.testing.assert_array_equal(st1.x_f, [0.5, 0.0])


def test_step_at_fixed_point_is_stationary():
    spec = build_portfolio_problem(portfolio_toy())
    tr = s3cm_run(spec, S3cmConfig(ConstantSchedule.default_for(spec.h.lipschitz), 20000,
                                   gradient_mode=EXACT, record_every=20000))
    state = tr.final
    nxt = s3cm_step(spec, state, state.gamma, state.gamma, exact=True)
    for a, b in ((nxt.x_f, state.x_f), (nxt.x_g, state.x_g), (nxt.u_g, state.u_g)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_step_draws_gradient_at_new_x_g():
    seen = []

    class Spy(SmoothOracle):
        dim = 2

        def value(self, x):
            return 0.0

        def gradient(self, x):
            return np.zeros(2)

        def stochastic_gradient(self, x, rng):
            seen.append(x.copy())
            return np.zeros(2)

    spec = ProblemSpec(Spy(), Zero(), Indicator(BoxSet(0.0, 1.0)), 2)
    state = SolverState(x_f=np.array([3.0, -1.0]), x_g=np.zeros(2), u_g=np.zeros(2), n=0,
                        gamma=1.0)
    nxt = s3cm_step(spec, state, 1.0, 0.5, np.random.default_rng(0))
    np.testing.assert_array_equal(seen[0], nxt.x_g)
    np.testing.assert_array_equal(nxt.x_g, [1.0, 0.0])


def test_step_reports_non_finite_iteration():
    class Bad(SmoothOracle):
        dim = 1

        def gradient(self, x):
            return np.array([np.nan])

    spec = ProblemSpec(Bad(), Zero(), Zero(), 1)
    state = SolverState(np.zeros(1), np.zeros(1), np.zeros(1), 6, 1.0)
    with pytest.raises(NonFiniteError) as err:
        s3cm_step(spec, state, 1.0, 1.0, exact=True)
    assert err.value.iteration == 7 and err.value.op == "gradient"


# --------------------------------------------------------------------------
# Runs
# --------------------------------------------------------------------------


def test_portfolio_toy_reaches_grid_optimum():
    spec = build_portfolio_problem(portfolio_toy())
    tr = s3cm_run(spec, S3cmConfig(Theorem1Schedule(1.0, 0.1, spec.h.strong_convexity), 10_000,
                                   gradient_mode=EXACT, record_every=1000))
    assert np.linalg.norm(tr.x - TOY_OPT) <= 1e-4


def test_zero_iterations_records_only_init():
    spec = build_portfolio_problem(portfolio_toy())
    cfg = S3cmConfig(PolynomialSchedule(1.0), 0)
    tr = s3cm_run(spec, cfg)
    assert tr.n.tolist() == [0]
    np.testing.assert_array_equal(tr.x, [0.5, 0.5])


def test_same_seed_same_trace_and_different_stream_differs():
    spec = build_portfolio_problem(portfolio_toy())
    runs = [s3cm_run(spec, S3cmConfig(PolynomialSchedule(1.0), 500, rng=RandomSource(9, k)))
            for k in (0, 0, 1)]
    np.testing.assert_array_equal(runs[0].objective, runs[1].objective)
    assert not np.array_equal(runs[0].objective, runs[2].objective)


def test_trace_steps_follow_schedule_and_record_every():
    spec = build_portfolio_problem(portfolio_toy())
    sched = Theorem1Schedule(2.0, 0.3, 0.5, 0.0)
    tr = s3cm_run(spec, S3cmConfig(sched, 95, record_every=10))
    assert tr.n.tolist() == [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95]
    np.testing.assert_array_equal(tr.gamma, sched.sequence(95)[tr.n])
    assert sched.n == 0  # the caller's schedule is not advanced


def test_record_every_cannot_exceed_max_iters():
    with pytest.raises(DomainError):
        S3cmConfig(PolynomialSchedule(1.0), 5, record_every=10)


def test_log_spaced_is_increasing_and_bounded():
    pts = log_spaced(10_000, 10)
    assert pts[0] == 0 and pts[-1] == 10_000
    assert np.all(np.diff(pts) > 0)


def test_feasibility_and_dual_recomputation():
    spec = build_portfolio_problem(portfolio_toy())
    tr = s3cm_run(spec, S3cmConfig(PolynomialSchedule(1.0, 0.7), 300, keep_iterates=True,
                                   rng=RandomSource(4)))
    simplex = SimplexSet()
    its = tr.iterates
    for prev, cur in zip(its[:-1], its[1:]):
        assert simplex.contains(cur["x_g"], 1e-10)
        gamma_n = tr.gamma[prev["n"]]
        u = (prev["x_f"] - cur["x_g"]) / gamma_n + prev["u_g"]
        np.testing.assert_allclose(cur["u_g"], u, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32), st.floats(0.05, 3.0))
def test_zero_variance_stochastic_equals_exact(seed, gamma0):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(3, 3))
    h = QuadraticOracle(B @ B.T + np.eye(3), rng.normal(size=3))
    spec = ProblemSpec(h, Indicator(HalfspaceSet(rng.normal(size=3), 0.1)),
                       Indicator(BoxSet(-1.0, 1.0)), 3)
    sched = PolynomialSchedule(gamma0, 1.0)
    a = s3cm_run(spec, S3cmConfig(sched, 50, gradient_mode=STOCHASTIC, keep_iterates=True))
    b = s3cm_run(spec, S3cmConfig(sched, 50, gradient_mode=EXACT, keep_iterates=True))
    for x, y in zip(a.iterates, b.iterates):
        np.testing.assert_allclose(x["x_g"], y["x_g"], atol=1e-12)


def test_davis_yin_matches_exact_s3cm_with_variable_step():
    spec = build_portfolio_problem(portfolio_toy())
    sched = Theorem1Schedule(3.0, 0.4, spec.h.strong_convexity)
    a = s3cm_run(spec, S3cmConfig(sched, 400, gradient_mode=EXACT, keep_iterates=True))
    b = davis_yin_run(spec, sched, 400, keep_iterates=True)
    for x, y in zip(a.iterates, b.iterates):
        np.testing.assert_allclose(x["x_g"], y["x_g"], atol=1e-12, rtol=0)
        np.testing.assert_allclose(x["x_f"], y["x_f"], atol=1e-12, rtol=0)
    np.testing.assert_allclose(a.u_norm, b.u_norm, atol=1e-10)


def test_g_zero_keeps_dual_at_zero():
    h = _quad(np.diag([1.0, 3.0]), [2.0, -1.0], noise=0.5)
    spec = ProblemSpec(h, Indicator(BoxSet(0.0, 1.0)), Zero(), 2)
    tr = s3cm_run(spec, S3cmConfig(PolynomialSchedule(0.5), 200, rng=RandomSource(1)))
    assert np.all(tr.u_norm == 0.0)
    assert bounded_dual_diagnostic(tr).max_norm == 0.0


# --------------------------------------------------------------------------
# SmCM
# --------------------------------------------------------------------------


def test_smcm_single_zero_term_is_sgd():
    h = _quad(np.diag([1.0, 2.0]), [1.0, 1.0], noise=0.3)
    sched = PolynomialSchedule(0.5)
    tr = smcm_run([Zero()], h, S3cmConfig(sched, 100, rng=RandomSource(2), keep_iterates=True))
    rng = RandomSource(2).generator()
    gam = sched.sequence(101)
    x = np.zeros(2)
    for it in tr.iterates[1:]:
        n = it["n"]
        np.testing.assert_array_equal(it["x_bar"], x)
        x = x - gam[n] * h.stochastic_gradient(x, rng)
        assert np.all(it["u"] == 0.0)


def test_smcm_averaging_invariant():
    spec = build_portfolio_problem(portfolio_toy())
    sched = PolynomialSchedule(1.0)
    tr = smcm_run([spec.f, spec.g], spec.h, S3cmConfig(sched, 50, keep_iterates=True))
    gam = sched.sequence(50)
    for prev, cur in zip(tr.iterates[:-1], tr.iterates[1:]):
        xbar = np.mean(prev["x_f"] + gam[prev["n"]] * prev["u"], axis=0)
        np.testing.assert_allclose(cur["x_bar"], xbar, atol=1e-12)


def test_smcm_and_s3cm_agree_on_toy():
    spec = build_portfolio_problem(portfolio_toy())
    cfg = S3cmConfig(Theorem1Schedule(1.0, 0.1, spec.h.strong_convexity), 10_000,
                     gradient_mode=EXACT, record_every=10_000)
    a = s3cm_run(spec, cfg).x
    b = smcm_run([spec.f, spec.g], spec.h, cfg).x
    assert np.linalg.norm(a - b) <= 1e-3
    assert np.linalg.norm(b - TOY_OPT) <= 1e-3


def test_smcm_same_box_terms_stay_put():
    h = _quad(np.eye(2), [0.3, 0.6])
    box = Indicator(BoxSet(0.0, 1.0))
    tr = smcm_run([box, box, box], h, S3cmConfig(ConstantSchedule(0.5, 1.0, 0.1, 0.9), 300,
                                                 gradient_mode=EXACT, keep_iterates=True),
                  x_f0_list=[[0.3, 0.6]] * 3)
    for it in tr.iterates:
        np.testing.assert_allclose(it["x_bar"], [0.3, 0.6], atol=1e-12)


def test_smcm_scales_prox_by_m():
    # f_i(x) = c^T x has prox x - gamma*m*c; with h = 0 and u = 0 initially the
    # first x_f update is x_bar - gamma_1 * (m c) - ... recompute directly
    h = _quad(np.zeros((1, 1)))
    terms = [Linear([1.0]), Linear([3.0])]
    state = smcm_init(terms, [[0.0], [0.0]], 1.0)
    nxt = smcm_step(terms, h, state, 1.0, 0.5, exact=True)
    np.testing.assert_allclose(nxt.x_f[:, 0], [-0.5 * 2 * 1.0, -0.5 * 2 * 3.0])


def test_smcm_needs_terms():
    with pytest.raises(DomainError):
        smcm_run([], _quad(), S3cmConfig(PolynomialSchedule(1.0), 3))


# --------------------------------------------------------------------------
# Dual diagnostic
# --------------------------------------------------------------------------


def test_dual_bounded_on_portfolio_toy():
    spec = build_portfolio_problem(portfolio_toy())
    maxima = []
    for iters in (10_000, 100_000):
        tr = s3cm_run(spec, S3cmConfig(Theorem1Schedule(1.0, 0.1, spec.h.strong_convexity),
                                       iters, gradient_mode=EXACT, record_every=100))
        maxima.append(bounded_dual_diagnostic(tr).max_norm)
    assert np.isfinite(maxima[0]) and abs(maxima[1] - maxima[0]) <= 0.1 * maxima[0]


def test_dual_grows_when_constraints_are_incompatible():
    # g and f are indicators of disjoint boxes: no solution, and u_g drifts linearly
    h = _quad(np.zeros((2, 2)))
    spec = ProblemSpec(h, Indicator(BoxSet(2.0, 3.0)), Indicator(BoxSet(0.0, 1.0)), 2)
    tr = s3cm_run(spec, S3cmConfig(ConstantSchedule(0.5, 1.0, 0.1, 0.9), 2000,
                                   gradient_mode=EXACT, record_every=10))
    diag = bounded_dual_diagnostic(tr)
    assert not diag.bounded
    assert diag.growth_ratio > 1.5


def test_fixed_point_residual_small_after_convergence():
    spec = build_portfolio_problem(portfolio_toy())
    sched = ConstantSchedule.default_for(spec.h.lipschitz)
    tr = davis_yin_run(spec, sched, 5000)
    assert fixed_point_residual(spec, tr.final) <= 1e-10
