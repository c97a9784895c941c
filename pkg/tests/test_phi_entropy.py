import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import chain_from_seed, interior_likelihood
from ctmc_dissipation.calculus import dirichlet_form
from ctmc_dissipation.chain import (
    adjoint_generator,
    evolve_marginals,
    propagate,
    stationary_distribution,
    validate_generator,
)
from ctmc_dissipation.entropy import (
    bregman,
    de_bruijn_report,
    fisher_information,
    fisher_information_forms,
    lambda_compensators,
    mlsi_constant,
    phi_entropy,
    poincare_constant,
    variance,
)
from ctmc_dissipation.errors import BoundaryLikelihood, BoundaryUnsupported, ChainError, NonpositiveArgument
from ctmc_dissipation.phi import PRESETS, XLOGX, parse_phi, renyi

seeds = st.integers(0, 2**32 - 1)
sizes = st.integers(2, 8)
phis = st.sampled_from(PRESETS)
GRID = 2.0 ** np.arange(-10, 11)


def psi(r):
    return r * np.log(r) - r + 1


@pytest.mark.parametrize("name", PRESETS + ("renyi:1.5", "renyi:7"))
def test_phi_descriptor(name):
    phi = parse_phi(name)
    assert phi.value(1.0) == 0
    assert np.all(phi.second(GRID) > 0)
    h = 1e-6 * GRID
    for F, dF in ((phi.value, phi.derivative), (phi.derivative, phi.second), (phi.second, phi.third)):
        fd = (F(GRID + h) - F(GRID - h)) / (2 * h)
        exact = dF(GRID)
        assert np.all(np.abs(fd - exact) <= 1e-6 * np.maximum(1.0, np.abs(exact)))


def test_phi_grammar():
    assert parse_phi("renyi:1") is XLOGX
    assert parse_phi("renyi:2.5").name == "renyi:2.5"
    for bad in ("renyi:0.5", "renyi:x", "tsallis"):
        with pytest.raises(ChainError):
            parse_phi(bad)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_bregman_forms(eta, xi):
    assert abs(bregman(eta, xi, "quadratic") - (xi - eta) ** 2) <= 1e-9 * max(1, (xi - eta) ** 2, eta * eta)
    assert abs(bregman(eta, xi, "xlogx") - xi * psi(eta / xi)) <= 1e-9 * max(1, eta, xi)
    for name in PRESETS:
        assert bregman(eta, xi, name) >= -1e-9 * max(1, eta, xi) ** 3
        assert bregman(xi, xi, name) == 0


def test_bregman_rejects_nonpositive():
    with pytest.raises(NonpositiveArgument):
        bregman(0.0, 1.0, "xlogx")


def test_entropy_closed_forms():
    q = np.array([1 / 3, 2 / 3])
    p = np.array([2 / 3, 1 / 3])
    assert abs(phi_entropy(p, q, "xlogx") - np.log(2) / 3) <= 1e-15
    assert phi_entropy(q, q, "renyi:3") == 0
    ell = p / q
    assert abs(phi_entropy(p, q, "quadratic") - variance(ell, q)) <= 1e-15


@given(seeds, sizes, phis)
def test_entropy_nonnegative(seed, n, phi):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(n), size=2)
    assert phi_entropy(p, q, phi) >= -1e-15
    assert abs(phi_entropy(q, q, phi)) <= 1e-15


def test_entropy_nonnegative_many_pairs():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n = int(rng.integers(2, 9))
        p, q = rng.dirichlet(np.ones(n), size=2)
        for phi in PRESETS:
            assert phi_entropy(p, q, phi) > 0


def test_boundary_entropy():
    q = np.array([0.5, 0.5])
    assert abs(phi_entropy([1.0, 0.0], q, "xlogx") - np.log(2)) <= 1e-15
    assert abs(phi_entropy([1.0, 0.0], q, "quadratic") - 1.0) <= 1e-15
    from ctmc_dissipation.phi import PhiFunction

    neglog = PhiFunction("neglog", lambda x: -np.log(x), lambda x: -1 / x, lambda x: x**-2.0, lambda x: -2 * x**-3.0)
    with pytest.raises(BoundaryUnsupported):
        phi_entropy([1.0, 0.0], q, neglog)


def test_renyi_limit_is_kl():
    rng = np.random.default_rng(1)
    for _ in range(10):
        p, q = rng.dirichlet(np.ones(5), size=2)
        kl = phi_entropy(p, q, "xlogx")
        assert abs(phi_entropy(p, q, renyi(1 + 1e-6)) - kl) <= 1e-4 * kl


@given(seeds, sizes, phis)
def test_fisher_forms_agree_on_db(seed, n, phi):
    g, q = chain_from_seed(seed, n, reversible=True)
    ell = interior_likelihood(np.random.default_rng(seed), q)
    forms = fisher_information_forms(ell, phi, g, q)
    assert set(forms) == {"dirichlet", "symmetrized", "weighted_norm"}
    I = forms["dirichlet"]
    assert I >= 0
    for v in forms.values():
        assert abs(v - I) <= 1e-10 * max(1, I)


@given(seeds, st.integers(3, 8), phis)
def test_fisher_nonnegative_without_balance(seed, n, phi):
    g, q = chain_from_seed(seed, n, reversible=False)
    ell = interior_likelihood(np.random.default_rng(seed), q)
    assert fisher_information(ell, phi, g, q) >= 0
    assert set(fisher_information_forms(ell, phi, g, q)) == {"dirichlet"} or n == 2


@given(seeds, sizes)
def test_kl_fisher_reversed_rate_form(seed, n):
    g, q = chain_from_seed(seed, n)
    ell = interior_likelihood(np.random.default_rng(seed), q)
    Kh = adjoint_generator(g, q).rates.copy()
    np.fill_diagonal(Kh, 0)
    direct = float(np.sum(q * ell * np.sum(Kh * psi(ell[None, :] / ell[:, None]), axis=1)))
    I = fisher_information(ell, "xlogx", g, q)
    assert abs(direct - I) <= 1e-10 * max(1, I)


@given(seeds, sizes)
def test_kl_fisher_dominates_sqrt_energy(seed, n):
    g, q = chain_from_seed(seed, n, reversible=True)
    ell = interior_likelihood(np.random.default_rng(seed), q)
    r = np.sqrt(ell)
    assert fisher_information(ell, "xlogx", g, q) >= 4 * dirichlet_form(r, r, g, q) - 1e-12


def test_equilibrium_quantities(rev4):
    g, q = rev4
    one = np.ones(4)
    assert fisher_information(one, "xlogx", g, q) == pytest.approx(0, abs=1e-15)
    lq, lp = lambda_compensators(one, "renyi:2", g, q)
    np.testing.assert_allclose(lq, 0, atol=1e-15)
    np.testing.assert_allclose(lp, 0, atol=1e-15)
    with pytest.raises(BoundaryLikelihood):
        fisher_information(np.array([0.0, 1, 1, 1]), "xlogx", g, q)


@given(seeds, sizes, phis)
def test_compensator_average_is_fisher(seed, n, phi):
    g, q = chain_from_seed(seed, n)
    ell = interior_likelihood(np.random.default_rng(seed), q)
    lq, lp = lambda_compensators(ell, phi, g, q)
    assert np.all(lq >= -1e-15)
    I = fisher_information(ell, phi, g, q)
    assert abs(q @ lq - I) <= 1e-12 * max(1, I)
    np.testing.assert_allclose(lp * ell, lq, rtol=1e-14)


@given(seeds, sizes)
def test_kl_compensator_form(seed, n):
    g, q = chain_from_seed(seed, n)
    ell = interior_likelihood(np.random.default_rng(seed), q)
    Kh = adjoint_generator(g, q).rates.copy()
    np.fill_diagonal(Kh, 0)
    lq, lp = lambda_compensators(ell, "xlogx", g, q)
    direct_p = np.sum(Kh * psi(ell[None, :] / ell[:, None]), axis=1)
    assert np.max(np.abs(lp - direct_p)) <= 1e-12 * max(1, np.max(direct_p))
    assert np.max(np.abs(lq - ell * direct_p)) <= 1e-12 * max(1, np.max(lq))


def test_de_bruijn_equilibrium(rev4):
    g, q = rev4
    rep = de_bruijn_report(g, q, q, "xlogx", 5.0, 100)
    assert np.max(np.abs(rep.entropy)) <= 1e-13
    assert np.max(np.abs(rep.rate)) <= 1e-13
    assert rep.balance_residual <= 1e-13


def test_de_bruijn_five_state_richardson():
    g, q = chain_from_seed(77, 5, reversible=True)
    p0 = np.random.default_rng(77).dirichlet(np.full(5, 5.0))
    coarse = de_bruijn_report(g, p0, q, "xlogx", 5.0, 2000)
    fine = de_bruijn_report(g, p0, q, "xlogx", 5.0, 4000)
    assert coarse.balance_residual <= 1e-8
    # Richardson: the Simpson error at 2000 steps is about 16/15 of the coarse-fine gap
    drop = coarse.entropy[0] - coarse.entropy[-1]
    assert abs(coarse.integral - fine.integral) <= 1e-8
    assert abs(fine.integral + (fine.integral - coarse.integral) / 15 - drop) <= 1e-10
    assert coarse.monotone


def test_de_bruijn_variance_identity():
    g, q = chain_from_seed(78, 4, reversible=False)
    p0 = np.array([0.4, 0.3, 0.2, 0.1])
    rep = de_bruijn_report(g, p0, q, "quadratic", 5.0, 2000)
    ells = evolve_marginals(g, p0, rep.grid).values / q
    twoE = np.array([2 * dirichlet_form(l, l, g, q) for l in ells])
    np.testing.assert_allclose(rep.rate, twoE, rtol=1e-12, atol=1e-15)
    assert rep.balance_residual <= 1e-8


def test_de_bruijn_boundary_start(cycle3):
    g, q = cycle3
    reps = [de_bruijn_report(g, [1.0, 0.0, 0.0], q, "xlogx", 5.0, s) for s in (1000, 2000, 4000)]
    assert all(r.grid[0] > 0 and r.monotone for r in reps)
    # the rate has a log singularity just left of the window, so Simpson is first order here
    res = [r.balance_residual for r in reps]
    assert res[2] <= 1e-5
    assert 1.8 <= res[0] / res[1] <= 2.2 and 1.8 <= res[1] / res[2] <= 2.2


@given(seeds, sizes, phis)
def test_entropy_decreases_along_flow(seed, n, phi):
    g, q = chain_from_seed(seed, n)
    p0 = np.random.default_rng(seed).dirichlet(np.ones(n))
    rep = de_bruijn_report(g, p0, q, phi, 3.0, 60)
    assert rep.monotone


@pytest.mark.parametrize("a,b", [(1.0, 1.0), (0.3, 2.2), (5.0, 0.01)])
def test_poincare_two_state(a, b):
    g = validate_generator([[-a, a], [b, -b]])
    q = stationary_distribution(g)
    alpha = poincare_constant(g, q)
    assert abs(alpha - 2 * (a + b)) <= 1e-10 * (a + b)
    # brute-force Rayleigh quotient over mean-zero f = (s q2, -s q1) on a fine grid of directions
    theta = np.linspace(0, np.pi, 10**6, endpoint=False)
    f = np.stack([np.cos(theta), np.sin(theta)])
    var = q @ (f - q @ f) ** 2
    ok = np.abs(f[1] - f[0]) > 1e-6
    E = 0.5 * (q[0] * a + q[1] * b) * (f[1] - f[0]) ** 2
    assert abs(np.min(2 * E[ok] / var[ok]) - alpha) <= 1e-8 * alpha


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_poincare_complete_graph(n):
    K = np.ones((n, n))
    np.fill_diagonal(K, 0)
    np.fill_diagonal(K, -K.sum(axis=1))
    g = validate_generator(K)
    assert abs(poincare_constant(g, stationary_distribution(g)) - 2 * n) <= 1e-12 * n


def _mlsi_two_state_grid(g, q, m=10**6):
    # feasible densities f = (f1, (1 - q1 f1) / q2) with f1 in (0, 1/q1), f1 away from 1
    f1 = np.linspace(0, 1 / q[0], m + 2)[1:-1]
    f1 = f1[np.abs(f1 - 1) > 1e-3]
    f2 = (1 - q[0] * f1) / q[1]
    a, b = g.rates[0, 1], g.rates[1, 0]
    E = q[0] * a * (f2 - f1) * (np.log(f2) - np.log(f1))
    H = q[0] * f1 * np.log(f1) + q[1] * f2 * np.log(f2)
    return float(np.min(E / H))


@pytest.mark.parametrize("rates", [(1.0, 1.0), (1.0, 3.0), (0.2, 2.0)])
def test_mlsi_two_state_brute_force(rates):
    a, b = rates
    g = validate_generator([[-a, a], [b, -b]])
    q = stationary_distribution(g)
    est = mlsi_constant(g, q)
    oracle = _mlsi_two_state_grid(g, q)
    assert abs(est.value - oracle) <= 1e-4 * oracle
    assert est.value <= poincare_constant(g, q) * (1 + 1e-12)
    assert est.value > 0


def test_mlsi_symmetric_two_state_at_linearization():
    g = validate_generator([[-1.0, 1.0], [1.0, -1.0]])
    est = mlsi_constant(g, stationary_distribution(g))
    assert abs(est.value - 4.0) <= 1e-6


@given(seeds, sizes)
def test_mlsi_positive_and_capped(seed, n):
    g, q = chain_from_seed(seed, n)
    est = mlsi_constant(g, q, restarts=3)
    assert 0 < est.value <= poincare_constant(g, q) * (1 + 1e-12)


def test_decay_along_curves():
    times = np.linspace(0, 6, 100)
    for i in range(20):
        g, q = chain_from_seed(900 + i, 2 + i % 6, reversible=bool(i % 2))
        p0 = np.random.default_rng(i).dirichlet(np.ones(g.n))
        alpha = poincare_constant(g, q)
        beta = mlsi_constant(g, q).value
        P = evolve_marginals(g, p0, times).values
        ells = P / q
        v0, h0 = variance(ells[0], q), phi_entropy(P[0], q, "xlogx")
        for t, ell, p in zip(times, ells, P):
            assert variance(ell, q) <= v0 * np.exp(-alpha * t) + 1e-10
            assert phi_entropy(p, q, "xlogx") <= h0 * np.exp(-beta * t) + 1e-10
