"""Phi-entropies, their dissipation rates, de Bruijn balances and functional-inequality constants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import minimize
from scipy.special import logsumexp

from .calculus import (
    check_interior_likelihood,
    dirichlet_form,
    grad,
    offdiag,
    weighted_h1_norm,
)
from .chain import Generator, adjoint_generator, check_probability, evolve_marginals, is_detailed_balance, spectral_gap
from .errors import BoundaryLikelihood, BoundaryUnsupported, EigenFailed, NonpositiveArgument, OptFailed
from .phi import PhiFunction, parse_phi


def bregman(eta, xi, phi: PhiFunction | str):
    """``Phi(eta) - Phi(xi) - (eta - xi) phi(xi)``."""
    phi = parse_phi(phi)
    eta = np.asarray(eta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if np.any(eta <= 0) or np.any(xi <= 0):
        raise NonpositiveArgument("Bregman divergence needs positive arguments")
    out = phi.value(eta) - phi.value(xi) - (eta - xi) * phi.derivative(xi)
    return out if out.ndim else float(out)


def phi_entropy(p, q, phi: PhiFunction | str) -> float:
    """``sum_y q(y) Phi(p(y) / q(y))``.

    Boundary ``p`` is accepted only when ``Phi(0+)`` is finite.
    """
    phi = parse_phi(phi)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    ell = p / q
    if np.any(ell <= 0):
        if not np.isfinite(phi.value_at_zero):
            raise BoundaryUnsupported(f"{phi.name} entropy is undefined at the boundary")
        vals = np.where(ell > 0, phi.value(np.where(ell > 0, ell, 1.0)), phi.value_at_zero)
    else:
        vals = phi.value(ell)
    return float(np.dot(q, vals))


def fisher_information(ell, phi: PhiFunction | str, gen: Generator, q) -> float:
    """Phi-Fisher information ``E(l, phi(l))``; nonnegative with or without detailed balance."""
    phi = parse_phi(phi)
    ell = check_interior_likelihood(ell, q)
    return dirichlet_form(ell, phi.derivative(ell), gen, q)


def fisher_information_symmetrized(ell, phi: PhiFunction | str, gen: Generator, q) -> float:
    """``1/2 sum q(x) K(x, y) (l(y) - l(x)) (phi(l(y)) - phi(l(x)))``; equals the Fisher information under detailed balance."""
    phi = parse_phi(phi)
    ell = check_interior_likelihood(ell, q)
    w = np.asarray(q)[:, None] * offdiag(gen.rates)
    return float(0.5 * np.sum(w * grad(ell) * grad(phi.derivative(ell))))


def fisher_information_forms(ell, phi: PhiFunction | str, gen: Generator, q) -> dict[str, float]:
    """All available expressions of the Fisher information; the last two only under detailed balance."""
    phi = parse_phi(phi)
    out = {"dirichlet": fisher_information(ell, phi, gen, q)}
    if is_detailed_balance(gen, q).holds:
        out["symmetrized"] = fisher_information_symmetrized(ell, phi, gen, q)
        out["weighted_norm"] = weighted_h1_norm(phi.derivative(ell), ell, phi, gen, q) ** 2
    return out


def lambda_compensators(ell, phi: PhiFunction | str, gen: Generator, q, adjoint: Generator | None = None):
    """Compensator densities ``(Lambda_Q, Lambda_P)``.

    ``Lambda_Q(x) = sum_y Khat(x, y) div_Phi(l(y) | l(x))`` and
    ``Lambda_P = Lambda_Q / l``; the ``q``-average of ``Lambda_Q`` is the Fisher information.
    """
    phi = parse_phi(phi)
    ell = np.asarray(ell, dtype=float)
    if np.any(ell <= 0):
        raise BoundaryLikelihood("compensators need a strictly positive likelihood")
    if adjoint is None:
        adjoint = adjoint_generator(gen, q)
    Kh = offdiag(adjoint.rates)
    a = ell[:, None]
    b = ell[None, :]
    B = phi.value(b) - phi.value(a) - (b - a) * phi.derivative(a)
    lam_q = np.sum(Kh * B, axis=-1)
    return lam_q, lam_q / ell


def lambda_compensators_batch(ells: np.ndarray, phi: PhiFunction, adjoint: Generator):
    """Vectorized :func:`lambda_compensators` over rows of ``ells`` (shape ``m x n``)."""
    Kh = offdiag(adjoint.rates)
    a = ells[:, :, None]
    b = ells[:, None, :]
    B = phi.value(b) - phi.value(a) - (b - a) * phi.derivative(a)
    lam_q = np.einsum("xy,mxy->mx", Kh, B)
    return lam_q, lam_q / ells


@dataclass(frozen=True, eq=False)
class DissipationReport:
    grid: np.ndarray
    entropy: np.ndarray
    rate: np.ndarray
    integral: float
    balance_residual: float
    phi: str

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.entropy) <= 1e-10) and np.all(self.rate >= -1e-12))

    def rows(self):
        return zip(self.grid, self.entropy, self.rate)


def de_bruijn_report(gen: Generator, p0, q, phi: PhiFunction | str, T: float, steps: int) -> DissipationReport:
    """Check ``H(0) - H(T) = int_0^T I(t) dt`` with composite Simpson on ``steps`` intervals.

    A boundary ``p0`` is evolved for one step first and the window starts there.
    """
    phi = parse_phi(phi)
    p0 = check_probability(p0, gen.n)
    q = np.asarray(q, dtype=float)
    if steps < 2:
        raise ValueError("steps must be at least 2")
    if steps % 2:
        steps += 1
    t0 = T / steps if np.any(p0 <= 0) else 0.0
    grid = t0 + np.linspace(0.0, T, steps + 1)
    curve = evolve_marginals(gen, p0, grid)
    ells = curve.values / q[None, :]
    if np.any(ells <= 0):
        raise BoundaryUnsupported("marginal curve touches the boundary inside the window")
    H = phi.value(ells) @ q
    # I(t) = E(l, phi(l)) = -<l, K phi(l)>_Q
    rate = -np.einsum("y,ty,ty->t", q, ells, phi.derivative(ells) @ gen.rates.T)
    integral = float(simpson(rate, x=grid))
    resid = float(abs(H[0] - H[-1] - integral))
    return DissipationReport(grid, H, rate, integral, resid, phi.name)


def variance(ell, q) -> float:
    ell = np.asarray(ell, dtype=float)
    return float(np.dot(q, ell * ell) - np.dot(q, ell) ** 2)


def poincare_constant(gen: Generator, q) -> float:
    """Optimal ``alpha`` with ``alpha Var_Q(f) <= 2 E(f, f)``: twice the spectral gap of the symmetrized generator."""
    try:
        gap = spectral_gap(gen, q)
    except np.linalg.LinAlgError as exc:
        raise EigenFailed(str(exc)) from exc
    if not gap > 0:
        raise EigenFailed(f"nonpositive spectral gap {gap}")
    return 2.0 * gap


@dataclass(frozen=True, eq=False)
class MLSIEstimate:
    """Best-found value of ``inf E(f, log f) / H(fQ | Q)``; an upper bound on the true constant."""

    value: float
    minimizer: np.ndarray
    distinct_minima: int
    restarts: int
    linearization_limit: float

    @property
    def attained_at_linearization(self) -> bool:
        return self.value >= self.linearization_limit * (1 - 1e-12)


def mlsi_ratio(f, gen: Generator, q) -> float:
    f = np.asarray(f, dtype=float)
    H = float(np.dot(q, f * np.log(f)))
    return dirichlet_form(f, np.log(f), gen, q) / H


def mlsi_constant(gen: Generator, q, restarts: int = 8, seed: int = 0, maxiter: int = 500) -> MLSIEstimate:
    """Multi-start quasi-Newton search for the modified log-Sobolev constant.

    Densities are parametrized as ``f = exp(u) / sum(q exp(u))``, which keeps
    them on the positive mean-one slice.  The ratio tends to twice the
    Rayleigh quotient as ``f -> 1``, so the Poincare constant caps the result.
    """
    q = np.asarray(q, dtype=float)
    n = gen.n
    alpha = poincare_constant(gen, q)

    def log_density(u):
        return u - logsumexp(u, b=q)

    def density(u):
        return np.exp(log_density(u))

    def objective(u):
        # log f stays finite even where f underflows
        lf = log_density(u)
        f = np.exp(lf)
        H = float(np.dot(q, f * lf))
        if H < 1e-10:
            return alpha
        return dirichlet_form(f, lf, gen, q) / H

    results = []
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        scale = (0.5, 1.5, 4.0)[r % 3]
        u0 = rng.normal(0.0, scale, n)
        if r == 0:
            u0 = np.zeros(n)
            u0[int(np.argmin(q))] = 3.0
        res = minimize(objective, u0, method="L-BFGS-B", options={"maxiter": maxiter})
        if np.isfinite(res.fun):
            results.append((float(res.fun), density(res.x)))
    if not results:
        raise OptFailed("every MLSI restart failed")
    results.sort(key=lambda t: t[0])
    best, fbest = results[0]
    distinct = []
    for val, _ in results:
        if not any(abs(val - d) <= 1e-6 * max(1.0, abs(d)) for d in distinct):
            distinct.append(val)
    if best >= alpha:
        best, fbest = alpha, np.ones(n)
    return MLSIEstimate(best, fbest, len(distinct), restarts, alpha)
