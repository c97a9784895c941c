import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import chain_from_seed
from ctmc_dissipation.chain import (
    CYCLE3,
    adjoint_generator,
    check_probability,
    evolve_marginals,
    generator_from_triples,
    is_boundary,
    is_detailed_balance,
    likelihood_curve,
    propagate,
    spectral_gap,
    stationary_distribution,
    transition_matrix,
    validate_generator,
)
from ctmc_dissipation.calculus import l2_inner
from ctmc_dissipation.errors import NegativeOffDiagonal, NegativeTime, Reducible, RowSumNonzero

seeds = st.integers(0, 2**32 - 1)
sizes = st.integers(2, 8)


def test_cycle_is_valid_and_uniform(cycle3):
    g, q = cycle3
    assert g.n == 3
    assert np.max(np.abs(q - 1 / 3)) <= 1e-14


def test_two_state_stationary(two_state):
    _, q = two_state
    np.testing.assert_allclose(q, [1 / 3, 2 / 3], atol=1e-15)


def test_reducible_rejected():
    with pytest.raises(Reducible):
        validate_generator([[-1, 1, 0], [1, -1, 0], [0, 0, 0]])


def test_negative_rate_rejected():
    with pytest.raises(NegativeOffDiagonal):
        validate_generator([[1, -1], [1, -1]])


def test_row_sum_tolerance():
    with pytest.raises(RowSumNonzero):
        validate_generator([[-1, 1 + 1e-9], [1, -1]])
    g = validate_generator([[-1, 1 + 1e-13], [1, -1]])
    assert np.all(g.rates.sum(axis=1) == 0)


def test_triples_fill_diagonal_and_check_explicit():
    g = generator_from_triples(3, [[0, 1, 1.0], [1, 2, 1.0], [2, 0, 1.0]])
    np.testing.assert_array_equal(g.rates, np.array(CYCLE3))
    generator_from_triples(2, [[0, 1, 2.0], [1, 0, 1.0], [0, 0, -2.0]])
    with pytest.raises(RowSumNonzero):
        generator_from_triples(2, [[0, 1, 2.0], [1, 0, 1.0], [0, 0, -1.5]])


def test_symmetric_rates_give_uniform():
    rng = np.random.default_rng(3)
    S = rng.uniform(0.1, 2, (5, 5))
    S = S + S.T
    np.fill_diagonal(S, 0)
    np.fill_diagonal(S, -S.sum(axis=1))
    g = validate_generator(S)
    q = stationary_distribution(g)
    np.testing.assert_allclose(q, 0.2, atol=1e-14)
    assert is_detailed_balance(g, q).holds


def test_cycle_detailed_balance_fails(cycle3):
    g, q = cycle3
    db = is_detailed_balance(g, q, 1e-10)
    assert not db.holds
    assert db.witness == (0, 1)
    assert abs(db.violation - 1 / 3) <= 1e-15


def test_cycle_adjoint_is_transpose(cycle3):
    g, q = cycle3
    np.testing.assert_allclose(adjoint_generator(g, q).rates, np.array(CYCLE3).T, atol=1e-15)


@given(seeds, sizes)
def test_two_state_or_reversible_adjoint_identity(seed, n):
    g, q = chain_from_seed(seed, n, reversible=True)
    assert is_detailed_balance(g, q).holds
    np.testing.assert_allclose(adjoint_generator(g, q).rates, g.rates, atol=1e-12)


@given(seeds)
def test_any_two_state_chain_balances(seed):
    g, q = chain_from_seed(seed, 2)
    assert is_detailed_balance(g, q).holds


@given(seeds, sizes)
def test_stationarity_residual(seed, n):
    g, q = chain_from_seed(seed, n)
    assert np.max(np.abs(g.rates.T @ q)) <= 1e-12 * np.max(np.abs(g.rates))
    assert abs(q.sum() - 1) <= 1e-12 and np.all(q > 0)


@given(seeds, sizes)
def test_adjoint_relation(seed, n):
    g, q = chain_from_seed(seed, n)
    rng = np.random.default_rng(seed)
    Kh = adjoint_generator(g, q)
    for _ in range(5):
        f, h = rng.normal(size=(2, n))
        assert abs(l2_inner(f, Kh.rates @ h, q) - l2_inner(g.rates @ f, h, q)) <= 1e-12


def test_transition_matrix_identity_at_zero(cycle3):
    np.testing.assert_array_equal(transition_matrix(cycle3[0], 0.0), np.eye(3))
    with pytest.raises(NegativeTime):
        transition_matrix(cycle3[0], -1.0)


@given(seeds, sizes, st.floats(0.01, 20), st.floats(0.01, 20))
def test_chapman_kolmogorov(seed, n, t, s):
    g, _ = chain_from_seed(seed, n)
    A = transition_matrix(g, t + s)
    B = transition_matrix(g, s) @ transition_matrix(g, t)
    assert np.linalg.norm(A - B) <= 1e-9
    assert np.all(A >= 0) and np.all(A <= 1)
    assert np.max(np.abs(A.sum(axis=1) - 1)) <= 1e-10


def test_generator_is_derivative_at_zero(rev4):
    g, _ = rev4
    h = 1e-6
    D = (transition_matrix(g, h) - np.eye(g.n)) / h
    assert np.max(np.abs(D - g.rates)) <= 10 * h * np.max(np.abs(g.rates)) ** 2


def test_long_horizon_matches_expm(rev4):
    from scipy.linalg import expm

    g, _ = rev4
    for t in (0.5, 7.0, 180.0):
        np.testing.assert_allclose(transition_matrix(g, t), expm(t * g.rates), atol=1e-12)


def test_two_state_closed_form():
    a, b = 0.7, 1.9
    g = validate_generator([[-a, a], [b, -b]])
    q1 = b / (a + b)
    grid = np.linspace(0, 4, 41)
    curve = evolve_marginals(g, [1.0, 0.0], grid)
    np.testing.assert_allclose(curve.values[:, 0], q1 + (1 - q1) * np.exp(-(a + b) * grid), atol=1e-14)


def test_stationary_start_is_constant(rev4):
    g, q = rev4
    curve = evolve_marginals(g, q, np.linspace(0, 3, 31))
    np.testing.assert_allclose(curve.values, np.tile(q, (31, 1)), atol=1e-14)


@given(seeds, sizes)
def test_convergence_to_equilibrium(seed, n):
    g, q = chain_from_seed(seed, n)
    p0 = np.random.default_rng(seed).dirichlet(np.ones(n))
    t = 50 / spectral_gap(g, q)
    assert np.max(np.abs(propagate(g, p0, t) - q)) <= 1e-6


def test_mass_conservation_long_grid(nonrev4):
    g, _ = nonrev4
    curve = evolve_marginals(g, [1, 0, 0, 0], np.linspace(0, 10, 10_001))
    assert np.max(np.abs(curve.values.sum(axis=1) - 1)) <= 1e-12


def test_grid_must_increase(rev4):
    with pytest.raises(ValueError):
        evolve_marginals(rev4[0], rev4[1], [0.0, 1.0, 1.0])


def test_likelihood_curve_backward_equation(nonrev4):
    g, q = nonrev4
    Kh = adjoint_generator(g, q).rates
    dt = 1e-4
    p0 = np.array([0.5, 0.2, 0.2, 0.1])
    curve = likelihood_curve(evolve_marginals(g, p0, [0.3 - dt, 0.3, 0.3 + dt]), q)
    deriv = (curve.values[2] - curve.values[0]) / (2 * dt)
    assert np.max(np.abs(deriv - Kh @ curve.values[1])) <= 1e-6
    np.testing.assert_allclose(curve.values @ q, 1.0, atol=1e-12)


def test_boundary_likelihood_flagged(cycle3):
    g, q = cycle3
    lc = likelihood_curve(evolve_marginals(g, [1, 0, 0], [0.0, 0.1]), q)
    np.testing.assert_allclose(lc.values[0], [3, 0, 0])
    assert lc.boundary[0] and not lc.boundary[1]
    assert is_boundary([1, 0, 0]) and not is_boundary([0.5, 0.5])


def test_probability_checks():
    check_probability([0.25, 0.75])
    with pytest.raises(ValueError):
        check_probability([0.3, 0.3])
    with pytest.raises(ValueError):
        check_probability([1.0, 0.0], interior=True)
