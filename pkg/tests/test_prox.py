import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from s3cm.core import DomainError
from s3cm.prox import (BoxSet, GridSpec, HalfspaceSet, HyperplaneSet, SimplexSet,
                       brute_force_prox, project_box, project_halfspace, project_hyperplane,
                       project_simplex, prox_check_suite, zero_value)

vectors = arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50))


# --------------------------------------------------------------------------
# Worked examples
# --------------------------------------------------------------------------


def test_simplex_examples():
    np.testing.assert_allclose(project_simplex([0.5, 0.5]), [0.5, 0.5])
    np.testing.assert_allclose(project_simplex([2.0, 0.0]), [1.0, 0.0])
    # threshold 2/3: (1, 1, 1) - 2/3
    np.testing.assert_allclose(project_simplex([1.0, 1.0, 1.0]), [1 / 3] * 3)
    np.testing.assert_allclose(project_simplex([3.0, 1.0], radius=2.0), [2.0, 0.0])
    with pytest.raises(DomainError):
        project_simplex([1.0], radius=0.0)


def test_simplex_ties_do_not_depend_on_order():
    x = np.array([0.8, 0.1, 0.8, 0.1])
    p = project_simplex(x)
    np.testing.assert_allclose(p, [0.5, 0.0, 0.5, 0.0])
    np.testing.assert_array_equal(project_simplex(x[::-1])[::-1], p)


def test_box_examples():
    np.testing.assert_array_equal(project_box(np.array([-1.0, 0.5, 3.0]), 0.0, 1.0), [0, 0.5, 1])
    with pytest.raises(DomainError):
        project_box(np.zeros(2), 1.0, 0.0)


def test_halfspace_examples():
    a = np.array([1.0, 1.0])
    np.testing.assert_allclose(project_halfspace(np.zeros(2), a, 1.0), [0.5, 0.5])
    x = np.array([2.0, 0.0])
    assert project_halfspace(x, a, 1.0) is not None
    np.testing.assert_array_equal(project_halfspace(x, a, 1.0), x)
    with pytest.raises(DomainError):
        project_halfspace(x, np.zeros(2), 1.0)


def test_hyperplane_examples():
    b = np.array([1.0, -1.0])
    np.testing.assert_allclose(project_hyperplane(np.array([1.0, 0.0]), b, 0.0), [0.5, 0.5])
    with pytest.raises(DomainError):
        project_hyperplane(np.zeros(2), np.zeros(2), 0.0)


# --------------------------------------------------------------------------
# Properties
# --------------------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(vectors, st.floats(0.1, 10))
def test_simplex_projection_feasible_and_idempotent(x, r):
    p = project_simplex(x, r)
    assert np.all(p >= 0)
    assert abs(p.sum() - r) <= 1e-9 * max(1, r) * x.size
    np.testing.assert_allclose(project_simplex(p, r), p, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(vectors)
def test_simplex_projection_beats_random_feasible_points(x):
    p = project_simplex(x)
    rng = np.random.default_rng(0)
    F = rng.dirichlet(np.ones(x.size), size=20)
    assert np.all(np.linalg.norm(F - x, axis=1) >= np.linalg.norm(p - x) - 1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda d: st.tuples(
    arrays(np.float64, d, elements=st.floats(-20, 20)),
    arrays(np.float64, d, elements=st.floats(-20, 20)),
    arrays(np.float64, d, elements=st.floats(-3, 3)).filter(lambda a: np.linalg.norm(a) > 0.1),
    st.floats(-5, 5))))
def test_affine_projections_nonexpansive(args):
    x, y, a, b = args
    for proj in (lambda v: project_halfspace(v, a, b), lambda v: project_hyperplane(v, a, b)):
        assert np.linalg.norm(proj(x) - proj(y)) <= np.linalg.norm(x - y) + 1e-9
    assert HalfspaceSet(a, b).contains(project_halfspace(x, a, b))
    assert HyperplaneSet(a, b).contains(project_hyperplane(x, a, b))


@settings(max_examples=100, deadline=None)
@given(vectors, st.floats(-5, 5), st.floats(0, 5))
def test_box_projection_is_clamp(x, lo, width):
    p = BoxSet(lo, lo + width).project(x)
    np.testing.assert_array_equal(p, np.clip(x, lo, lo + width))


def test_set_indicators_match_contains():
    rng = np.random.default_rng(3)
    sets = [SimplexSet(), BoxSet(0, 1), HalfspaceSet([1.0, 2.0, -1.0], 0.3),
            HyperplaneSet([1.0, 0.0, 1.0], 0.5)]
    Z = rng.normal(size=(50, 3))
    for s in sets:
        P = np.array([s.project(z) for z in Z])
        assert np.all(s.indicator(P) == 0.0)
        vals = s.indicator(Z)
        assert all((v == 0.0) == s.contains(z) for v, z in zip(vals, Z))


# --------------------------------------------------------------------------
# Grid oracle
# --------------------------------------------------------------------------


def test_brute_force_prox_of_zero_is_nearest_grid_point():
    z = brute_force_prox(zero_value, np.array([0.12345, -0.5]), 1.0, GridSpec(-1, 1, 1e-3))
    np.testing.assert_allclose(z, [0.123, -0.5], atol=1e-12)


def test_brute_force_prox_rejects_high_dimension():
    with pytest.raises(DomainError):
        brute_force_prox(zero_value, np.zeros(4), 1.0, GridSpec(-1, 1, 0.1))


def test_brute_force_prox_matches_closed_form_l2_prox():
    # prox of (1/2)||z||^2 with gamma is x / (1 + gamma)
    x = np.array([1.3, -0.7])
    z = brute_force_prox(lambda Z: 0.5 * np.sum(Z ** 2, axis=1), x, 2.0, GridSpec(-2, 2, 1e-5))
    np.testing.assert_allclose(z, x / 3.0, atol=1e-5)


def test_brute_force_prox_projects_onto_aligned_sets():
    rng = np.random.default_rng(4)
    grid = GridSpec(-4.0, 4.0, 1e-3)
    for s in (SimplexSet(), BoxSet(0.0, 1.0), HalfspaceSet([1.0, 1.0], 0.5),
              HyperplaneSet([1.0, -1.0], 0.3)):
        for x in rng.normal(size=(3, 2)) * 1.5:
            z = brute_force_prox(s.indicator, x, 1.0, grid)
            assert np.max(np.abs(z - s.project(x))) <= 1e-3


def test_prox_suite_covers_all_operators_and_properties():
    results = prox_check_suite(n_points=200, n_oracle=4)
    pairs = {(r.operator, r.prop) for r in results}
    for op in ("simplex", "box", "halfspace", "hyperplane"):
        for prop in ("idempotence", "nonexpansiveness", "obtuse_angle", "oracle_agreement"):
            assert (op, prop) in pairs
    assert all(r.passed for r in results)
