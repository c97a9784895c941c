import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import chain_from_seed
from ctmc_dissipation.chain import adjoint_generator, propagate
from ctmc_dissipation.entropy import phi_entropy
from ctmc_dissipation.errors import ChainError, HorizonMismatch
from ctmc_dissipation.phi import parse_phi
from ctmc_dissipation.trajectory import (
    BLOCK,
    Path,
    compensator_test,
    conditional_martingale_test,
    ergodic_average,
    ergodic_test,
    martingale_test_reversed_likelihood,
    reverse_path,
    reversed_transition_test,
    sample_path,
    simulate,
)

P0_CYCLE = np.array([0.7, 0.2, 0.1])


@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.floats(0.1, 20.0))
def test_path_invariants(seed, n, T):
    g, q = chain_from_seed(seed, n)
    path = sample_path(g, q, T, seed)
    assert path.states.size == path.jump_times.size + 1
    assert np.all(np.diff(path.jump_times) > 0)
    assert np.all(path.states[1:] != path.states[:-1])
    # every jump follows a positive rate
    assert np.all(g.rates[path.states[:-1], path.states[1:]] > 0)
    _, dur = path.holding()
    assert abs(dur.sum() - T) <= 1e-12 * T
    back = reverse_path(reverse_path(path, T), T)
    np.testing.assert_array_equal(back.states, path.states)
    np.testing.assert_allclose(back.jump_times, path.jump_times, rtol=0, atol=1e-12 * T)


def test_reverse_path_state_lookup(cycle3):
    g, q = cycle3
    path = sample_path(g, 0, 4.0, 3)
    rev = reverse_path(path, 4.0)
    for s in np.linspace(0.01, 3.99, 50):
        if np.min(np.abs(path.jump_times - (4.0 - s))) > 1e-9:
            assert rev.state_at(s) == path.state_at(4.0 - s)


def test_path_rejections(cycle3):
    g, _ = cycle3
    with pytest.raises(ChainError):
        Path(1.0, np.array([0.5, 0.4]), np.array([0, 1, 2]))
    with pytest.raises(ChainError):
        Path(1.0, np.array([0.5]), np.array([1, 1]))
    with pytest.raises(HorizonMismatch):
        reverse_path(sample_path(g, 0, 2.0, 0), 3.0)
    with pytest.raises(ChainError):
        sample_path(g, 0, 0.0, 0)


def test_forward_one_step_rates(nonrev4):
    g, q = nonrev4
    h = 1e-3
    res = simulate(g, q, h, [0.0, h], 10**6, seed=5)
    x0, xh = res.at_checkpoints[:, 0], res.at_checkpoints[:, 1]
    for a in range(4):
        na = np.sum(x0 == a)
        for b in range(4):
            if a == b or g.rates[a, b] == 0:
                continue
            p = h * g.rates[a, b]
            est = np.sum((x0 == a) & (xh == b)) / na
            assert abs(est - p) <= 4 * np.sqrt(p * (1 - p) / na) + 2 * p * h * g.exit_rates.max()


def test_reversed_transitions_match_adjoint(nonrev4):
    g, q = nonrev4
    rep = reversed_transition_test(g, q, h=1e-3, n_paths=10**6, seed=6)
    assert rep.passed, rep.z_scores
    np.testing.assert_allclose(rep.details["khat"], [v for v in adjoint_generator(g, q).rates[~np.eye(4, dtype=bool)] if v > 0])


def test_ergodic_average_cycle(cycle3):
    g, q = cycle3
    path = sample_path(g, 0, 1e4, 8)
    for x in range(3):
        f = np.eye(3)[x]
        assert abs(ergodic_average(path, f) - 1 / 3) <= 0.02
    assert ergodic_test(g, q, [1.0, 2.0, 5.0], 1e4, seed=8).passed


def test_reversed_likelihood_cycle(cycle3):
    g, q = cycle3
    rep = martingale_test_reversed_likelihood(g, P0_CYCLE, q, 2.0, n_paths=100_000, seed=9)
    assert rep.passed, rep.z_scores
    assert rep.paths_used == 100_000
    # at s = T the functional is l(0, .) = P0 / Q, whose Q-mean is exactly one
    assert abs(rep.estimate[-1] - 1) <= 4 * rep.stderr[-1]


def test_conditional_martingale(nonrev4):
    g, q = nonrev4
    p0 = np.array([0.55, 0.25, 0.15, 0.05])
    rep = conditional_martingale_test(g, p0, q, 2.0, 0.5, 1.5, n_paths=200_000, seed=10)
    assert rep.passed, rep.z_scores
    with pytest.raises(ChainError):
        conditional_martingale_test(g, p0, q, 2.0, 1.5, 0.5)


@pytest.mark.parametrize("phi,measure", [("quadratic", "Q"), ("xlogx", "P"), ("xlogx", "Q"), ("renyi:3", "P")])
def test_compensators(nonrev4, phi, measure):
    g, q = nonrev4
    p0 = np.array([0.55, 0.25, 0.15, 0.05])
    rep = compensator_test(g, p0, q, phi, measure, 2.0, n_paths=100_000, seed=11)
    assert rep.passed, rep.z_scores
    assert rep.details["min_integral"] >= -1e-12
    assert rep.target == pytest.approx(phi_entropy(propagate(g, p0, 2.0), q, phi), rel=1e-14)


def test_compensator_at_equilibrium_is_exact(rev4):
    g, q = rev4
    rep = compensator_test(g, q, q, "xlogx", "Q", 1.0, n_paths=5000, seed=1)
    assert all(z == 0 for z in rep.z_scores)
    assert max(abs(e) for e in rep.estimate) <= 1e-12


def test_inverse_likelihood_has_unit_mean_under_p(nonrev4):
    g, q = nonrev4
    p0 = np.array([0.55, 0.25, 0.15, 0.05])
    times = np.linspace(0, 2, 5)
    res = simulate(g, p0, 2.0, times, 100_000, seed=12)
    ell = np.array([propagate(g, p0, t) / q for t in times])
    vals = 1 / ell[np.arange(5)[None, :], res.at_checkpoints]
    z = (vals.mean(axis=0) - 1) / (vals.std(axis=0, ddof=1) / np.sqrt(vals.shape[0]))
    assert np.all(np.abs(z) <= 4)


def test_entropy_along_reversal_is_submartingale(nonrev4):
    g, q = nonrev4
    p0 = np.array([0.55, 0.25, 0.15, 0.05])
    T = 2.0
    phi = parse_phi("xlogx")
    s = np.linspace(0, T, 5)
    res = simulate(g, q, T, T - s, 100_000, seed=13)
    ell = np.array([propagate(g, p0, T - si) / q for si in s])
    vals = phi.value(ell[np.arange(5)[None, :], res.at_checkpoints])
    means = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(vals.shape[0])
    # exact means are H(P(T - s)), increasing in s
    exact = np.array([phi_entropy(propagate(g, p0, T - si), q, phi) for si in s])
    assert np.all(np.diff(exact) > 0)
    assert np.all(np.abs(means - exact) <= 4 * se)


def test_determinism_and_thread_independence(nonrev4):
    g, q = nonrev4
    p0 = np.array([0.55, 0.25, 0.15, 0.05])
    n = 3 * BLOCK + 17
    a = compensator_test(g, p0, q, "xlogx", "P", 1.0, n_paths=n, seed=21, threads=1)
    b = compensator_test(g, p0, q, "xlogx", "P", 1.0, n_paths=n, seed=21, threads=4)
    assert a.to_json() == b.to_json()
    c = compensator_test(g, p0, q, "xlogx", "P", 1.0, n_paths=n, seed=22)
    assert c.estimate != a.estimate


def test_report_formats(cycle3):
    g, q = cycle3
    rep = martingale_test_reversed_likelihood(g, P0_CYCLE, q, 1.0, n_paths=2000, seed=4)
    d = json.loads(rep.to_json())
    assert d["verdict"] in ("PASS", "FAIL")
    assert d["seed"] == 4 and d["paths_used"] == 2000
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["checkpoint", "estimate", "stderr", "target", "z"]
    assert len(rows) == 1 + len(rep.checkpoints)
    assert float(rows[1][1]) == rep.estimate[0]
