import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from s3cm.core import (ContractError, DomainError, Indicator, KernelQuadraticOracle,
                       LeastSquaresOracle, Linear, NonFiniteError, ProblemSpec, QuadraticOracle,
                       RandomSource, SmoothOracle, SolverState, SquaredNorm,
                       UnsupportedCheckError, Zero, as_vector, check_unbiasedness,
                       fixed_point_residual)
from s3cm.prox import BoxSet, GridSpec, SimplexSet, brute_force_prox

from conftest import central_difference


def test_as_vector_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        as_vector([1.0, np.nan])
    with pytest.raises(DomainError):
        as_vector(np.zeros((2, 2)))
    assert as_vector(3.0).shape == (1,)


def test_random_source_reproducible_and_streams_differ():
    a = RandomSource(42, 3).generator().random(5)
    b = RandomSource(42, 3).generator().random(5)
    c = RandomSource(42, 4).generator().random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert RandomSource(42).spawn(4) == RandomSource(42, 4)


def test_problem_spec_dimension_check():
    h = QuadraticOracle(np.eye(3))
    with pytest.raises(DomainError):
        ProblemSpec(h, Zero(), Indicator(BoxSet(0, 1, dim=2)), 3)
    with pytest.raises(DomainError):
        ProblemSpec(h, Zero(), Linear(np.ones(2)), 3)


def test_objective_skips_indicators_and_adds_other_terms():
    h = QuadraticOracle(np.eye(2))
    spec = ProblemSpec(h, SquaredNorm(2.0), Indicator(SimplexSet()), 2)
    x = np.array([3.0, 4.0])
    assert spec.objective(x) == pytest.approx(0.5 * 25 + 25)


def test_least_squares_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    A, y = rng.normal(size=(30, 4)), rng.normal(size=30)
    h = LeastSquaresOracle(A, y)
    for _ in range(5):
        x = rng.normal(size=4)
        fd = central_difference(h.value, x)
        np.testing.assert_allclose(h.gradient(x), fd, rtol=1e-5, atol=1e-7)
    assert h.strong_convexity <= h.lipschitz


def test_least_squares_components_average_to_gradient():
    rng = np.random.default_rng(1)
    h = LeastSquaresOracle(rng.normal(size=(17, 5)), rng.normal(size=17))
    assert check_unbiasedness(h, rng.normal(size=5)) <= 1e-12


def test_kernel_oracle_counts_columns():
    M = np.array([[1.0, 0.5, 0.1], [0.5, 1.0, 0.2], [0.1, 0.2, 1.0]])
    h = KernelQuadraticOracle(M)
    x = np.array([0.3, 0.1, 0.7])
    h.stochastic_gradient(x, np.random.default_rng(0))
    assert h.columns_touched == 1
    h.gradient(x)
    assert h.columns_touched == 1 + 3
    np.testing.assert_allclose(h.component_gradient(x, 2), 3 * M[:, 2] * x[2] - 1)


def test_quadratic_oracle_without_noise_consumes_no_randomness():
    h = QuadraticOracle(np.diag([1.0, 2.0]), center=[1.0, -1.0])
    rng = np.random.default_rng(5)
    state = rng.bit_generator.state
    x = np.array([0.2, 0.3])
    np.testing.assert_array_equal(h.stochastic_gradient(x, rng), h.gradient(x))
    assert rng.bit_generator.state == state


def test_check_unbiasedness_rejects_non_enumerable_oracle():
    with pytest.raises(UnsupportedCheckError):
        check_unbiasedness(QuadraticOracle(np.eye(2), noise=1.0), np.zeros(2))


def test_base_oracle_has_no_exact_gradient():
    class Only(SmoothOracle):
        dim = 1

    with pytest.raises(ContractError):
        Only().gradient(np.zeros(1))


# --------------------------------------------------------------------------
# fixed_point_residual
# --------------------------------------------------------------------------


def test_residual_zero_at_unconstrained_minimiser():
    Q = np.array([[3.0, 1.0], [1.0, 2.0]])
    c = np.array([0.4, -1.2])
    spec = ProblemSpec(QuadraticOracle(Q, c), Zero(), Zero(), 2)
    state = SolverState(x_f=c.copy(), x_g=c.copy(), u_g=np.zeros(2), n=0, gamma=0.3)
    assert fixed_point_residual(spec, state) <= 1e-10


def _simplex_quadratic():
    # minimiser of 0.5 (t - .9)^2 + (0.4 - t)^2 on the segment is t = 1.7 / 3
    Q = np.diag([1.0, 2.0])
    return ProblemSpec(QuadraticOracle(Q, [0.9, 0.6]), Zero(), Indicator(SimplexSet()), 2)


def test_residual_small_at_grid_oracle_optimum():
    spec = _simplex_quadratic()
    h = spec.h

    def value(Z):
        E = Z - h.center
        return 0.5 * np.einsum("ij,jk,ik->i", E, h.Q, E) + SimplexSet().indicator(Z)

    x_star = brute_force_prox(value, np.zeros(2), 1e6, GridSpec(-1.0, 2.0, 1e-7))
    np.testing.assert_allclose(x_star, [1.7 / 3, 1.3 / 3], atol=2e-7)
    state = SolverState(x_f=x_star, x_g=x_star, u_g=-h.gradient(x_star), n=0, gamma=0.5)
    assert fixed_point_residual(spec, state) <= 1e-6


def test_residual_large_away_from_optimum():
    spec = _simplex_quadratic()
    x = np.array([1.7 / 3 + 0.1, 1.3 / 3 - 0.1])
    state = SolverState(x_f=x, x_g=x, u_g=-spec.h.gradient(x), n=0, gamma=0.5)
    assert fixed_point_residual(spec, state) > 1e-3


def test_residual_detects_state_that_only_moves_x_f():
    # x_f far from x_g but prox_g maps it back: a two-term residual would miss this
    spec = ProblemSpec(QuadraticOracle(np.eye(1)), Zero(), Indicator(BoxSet(0.0, 1.0)), 1)
    state = SolverState(x_f=np.array([0.0]), x_g=np.array([0.0]), u_g=np.array([-5.0]),
                        n=0, gamma=1.0)
    assert fixed_point_residual(spec, state) > 1.0


def test_residual_needs_exact_gradient():
    class NoGrad(SmoothOracle):
        dim = 1
        has_exact_gradient = False

    spec = ProblemSpec(NoGrad(), Zero(), Zero(), 1)
    with pytest.raises(ContractError):
        fixed_point_residual(spec, SolverState(np.zeros(1), np.zeros(1), np.zeros(1), 0, 1.0))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-10, 10)), st.floats(0.01, 10))
def test_indicator_prox_lands_in_set(x, gamma):
    for s in (SimplexSet(2.0), BoxSet(-1.0, 0.5)):
        term = Indicator(s)
        assert np.isfinite(term.value(term.prox(x, gamma)))
