"""Discrete transport geometry on likelihood ratios of a reversible chain.

Tangent vectors at ``l`` are written through potentials via the continuity
equation ``dl + div(theta_l grad psi) = 0``; the metric is
``g_l(dl1, dl2) = <grad psi1, grad psi2>`` in ``L2(edges, theta_l C)``.  Under
this convention the chain itself moves along ``psi = -phi(l)`` and the entropy
slope is ``dH = <phi(l), psi>_{H1_Theta}``.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import minimize

from .calculus import (
    conductances,
    grad,
    l2_edge_inner,
    l2_inner,
    offdiag,
    require_detailed_balance,
    theta_weight,
    theta_weight_d1,
    vartheta_edge_weights,
    weighted_h1_inner,
    weighted_h_minus1_norm,
    weighted_laplacian,
    weighted_potential,
)
from .chain import Generator, check_probability
from .entropy import fisher_information, phi_entropy
from .errors import BadTangent, ChainError, EigenFailed, OptFailed
from .phi import PhiFunction, parse_phi

TANGENT_TOL = 1e-10
BOUNDARY_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class TangentRepresentation:
    """Tangent ``delta_l`` at ``l`` together with a potential ``psi`` linked by the continuity equation."""

    delta_ell: np.ndarray
    psi: np.ndarray

    @property
    def velocity(self) -> np.ndarray:
        return grad(self.psi)

    @classmethod
    def from_potential(cls, ell, psi, phi, gen: Generator, q) -> "TangentRepresentation":
        th = vartheta_edge_weights(ell, phi, gen, q)
        psi = np.asarray(psi, dtype=float)
        return cls(-weighted_laplacian(th, gen) @ psi, psi)

    @classmethod
    def from_delta(cls, ell, delta_ell, phi, gen: Generator, q) -> "TangentRepresentation":
        d = np.asarray(delta_ell, dtype=float)
        if abs(np.dot(q, d)) > TANGENT_TOL * max(1.0, np.max(np.abs(d))):
            raise BadTangent("tangent must have zero Q-mean")
        return cls(d, weighted_potential(d, ell, phi, gen, q))

    def check(self, ell, phi, gen: Generator, q) -> None:
        th = vartheta_edge_weights(ell, phi, gen, q)
        scale = max(1.0, float(np.max(np.abs(self.delta_ell))))
        if abs(float(np.dot(q, self.delta_ell))) > TANGENT_TOL * scale:
            raise BadTangent("tangent must have zero Q-mean")
        resid = self.delta_ell + weighted_laplacian(th, gen) @ self.psi
        if np.max(np.abs(resid)) > TANGENT_TOL * max(scale, float(np.max(np.abs(self.psi)))):
            raise BadTangent(f"continuity equation violated by {np.max(np.abs(resid)):.3e}")


def riemannian_metric(ell, d1: TangentRepresentation, d2: TangentRepresentation, phi, gen: Generator, q) -> float:
    """``g_l(d1, d2) = <grad psi1, grad psi2>_{L2(edges, theta_l C)}``."""
    require_detailed_balance(gen, q)
    d1.check(ell, phi, gen, q)
    d2.check(ell, phi, gen, q)
    return weighted_h1_inner(d1.psi, d2.psi, ell, phi, gen, q)


def gradient_flow_field(ell, functional_derivative, phi, gen: Generator, q) -> np.ndarray:
    """``div(theta_l grad D)``; with ``D = phi(l)`` this is ``K l``."""
    require_detailed_balance(gen, q)
    th = vartheta_edge_weights(ell, phi, gen, q)
    return weighted_laplacian(th, gen) @ np.asarray(functional_derivative, dtype=float)


def edi_gap(ell, tangent: TangentRepresentation, phi, gen: Generator, q) -> float:
    """``2 dH + ||dl||^2 + I = ||psi + phi(l)||^2_{H1_Theta} >= 0``."""
    phi = parse_phi(phi)
    require_detailed_balance(gen, q)
    f = phi.derivative(np.asarray(ell, dtype=float))
    psi = tangent.psi
    return (
        2.0 * weighted_h1_inner(f, psi, ell, phi, gen, q)
        + weighted_h1_inner(psi, psi, ell, phi, gen, q)
        + weighted_h1_inner(f, f, ell, phi, gen, q)
    )


def edi_gap_dual(ell, delta_ell, phi, gen: Generator, q) -> float:
    """The same gap from the dual side: ``2 <phi(l), dl>_Q + ||dl||^2_{H-1_Theta} + I``."""
    phi = parse_phi(phi)
    ell = np.asarray(ell, dtype=float)
    norm, _ = weighted_h_minus1_norm(delta_ell, ell, phi, gen, q)
    return 2.0 * l2_inner(phi.derivative(ell), delta_ell, q) + norm**2 + fisher_information(ell, phi, gen, q)


@dataclass
class DescentReport:
    slopes: np.ndarray
    chain_slope: float
    margins: np.ndarray
    gradient_equivalent: np.ndarray
    tol: float = 1e-10

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins >= -self.tol))

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.slopes))


def normalized_slope(ell, psi, phi, gen: Generator, q) -> float:
    """Initial entropy slope along ``psi`` per unit speed: ``<phi(l), psi / ||psi||>_{H1_Theta}``."""
    phi = parse_phi(phi)
    f = phi.derivative(np.asarray(ell, dtype=float))
    nrm = np.sqrt(weighted_h1_inner(psi, psi, ell, phi, gen, q))
    if nrm <= 0:
        raise BadTangent("perturbation is constant")
    return weighted_h1_inner(f, psi, ell, phi, gen, q) / nrm


def steepest_descent_experiment(ell0, perturbations, phi, gen: Generator, q, tol: float = 1e-10) -> DescentReport:
    """Compare normalized entropy slopes against the chain's own direction ``psi = -phi(l0)``.

    Every margin ``slope - chain_slope`` is nonnegative by Cauchy-Schwarz; a
    margin at round-off level flags ``grad psi`` as a negative multiple of ``grad phi(l0)``.
    """
    phi = parse_phi(phi)
    require_detailed_balance(gen, q)
    ell0 = np.asarray(ell0, dtype=float)
    th = vartheta_edge_weights(ell0, phi, gen, q)
    w = th * conductances(gen, q)
    G = grad(phi.derivative(ell0))
    gnorm = np.sqrt(l2_edge_inner(G, G, w))
    chain_slope = -gnorm
    P = np.atleast_2d(np.asarray(perturbations, dtype=float))
    D = P[:, None, :] - P[:, :, None]
    inner = np.einsum("xy,kxy,xy->k", w, D, G)
    norms = np.sqrt(np.einsum("xy,kxy,kxy->k", w, D, D))
    if np.any(norms <= 0):
        raise BadTangent("perturbations must be non-constant")
    slopes = inner / norms
    margins = slopes - chain_slope
    equiv = margins <= 1e-9 * max(1.0, gnorm)
    return DescentReport(slopes, float(chain_slope), margins, equiv, tol)


@dataclass
class GeodesicOptions:
    tol: float = 1e-7
    lbfgs_iter: int = 60
    newton_iter: int = 40
    restarts: int = 4
    seed: int = 0
    # raise OptFailed when the final residual exceeds tol
    strict: bool = True


@dataclass(frozen=True, eq=False)
class GeodesicResult:
    """Discrete geodesic: likelihoods at ``N + 1`` slices and the potential driving each step."""

    distance: float
    times: np.ndarray
    likelihoods: np.ndarray
    probabilities: np.ndarray
    potentials: np.ndarray
    segment_actions: np.ndarray
    action_residual: float
    boundary_flag: bool
    iterations: int
    details: dict = field(default_factory=dict)

    @property
    def speed_variation(self) -> float:
        """Relative spread of per-segment action; zero for an exactly constant-speed path."""
        a = self.segment_actions
        m = a.mean()
        return float(a.std() / m) if m > 0 else 0.0

    @property
    def constant_speed(self) -> bool:
        return self.speed_variation <= 0.01

    def to_csv(self, header: bool = True) -> str:
        """Columns ``slice_index, t, state, probability, potential``.

        The potential at slice ``k < N`` drives the step from ``k`` to ``k + 1``;
        the final slice repeats the last step's potential.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["slice_index", "t", "state", "probability", "potential"])
        N = len(self.times) - 1
        for k, t in enumerate(self.times):
            pot = self.potentials[min(k, N - 1)] if N > 0 else np.zeros(self.probabilities.shape[1])
            for x in range(self.probabilities.shape[1]):
                w.writerow([k, format(t, ".17g"), x, format(self.probabilities[k, x], ".17g"), format(pot[x], ".17g")])
        return buf.getvalue()


class _Action:
    """Discrete Benamou-Brenier action and its gradient for a fixed pair of endpoints."""

    def __init__(self, gen: Generator, q, phi: PhiFunction, ell0, ell1, N: int):
        self.q = np.asarray(q, dtype=float)
        self.phi = phi
        self.N = N
        self.n = gen.n
        self.K = offdiag(gen.rates)
        C = conductances(gen, q)
        self.Csym = C + C.T
        self.ell0 = ell0
        self.ell1 = ell1

    def slices(self, u):
        U = u.reshape(self.N - 1, self.n)
        W = np.exp(U - U.max(axis=1, keepdims=True))
        inner = W / (W @ self.q)[:, None]
        return np.vstack([self.ell0, inner, self.ell1])

    def segments(self, L):
        """Per-segment ``||f_k||^2`` with ``f_k = l_{k+1} - l_k`` at midpoint weights, plus potentials."""
        N, n, q = self.N, self.n, self.q
        F = L[1:] - L[:-1]
        Lbar = 0.5 * (L[1:] + L[:-1])
        TH = theta_weight(Lbar[:, :, None], Lbar[:, None, :], self.phi)
        Lap = self.K[None] * TH
        idx = np.arange(n)
        Lap[:, idx, idx] = 0.0
        Lap[:, idx, idx] = -Lap.sum(axis=2)
        A = np.zeros((N, n + 1, n + 1))
        A[:, :n, :n] = Lap
        A[:, :n, n] = 1.0
        A[:, n, :n] = q
        rhs = np.zeros((N, n + 1))
        rhs[:, :n] = -F
        H = np.linalg.solve(A, rhs[..., None])[..., 0][:, :n]
        vals = np.einsum("y,ky,ky->k", q, H, F)
        return vals, H, F, Lbar

    def value_grad(self, u):
        L = self.slices(u)
        vals, H, F, Lbar = self.segments(L)
        N = self.N
        total = N * vals.sum()
        dF_df = 2.0 * self.q[None, :] * H
        D = H[:, None, :] - H[:, :, None]
        dth = theta_weight_d1(Lbar[:, :, None], Lbar[:, None, :], self.phi)
        dF_dbar = -np.einsum("xy,kxy,kxy->kx", self.Csym, D * D, dth)
        # l_k enters f_{k-1} (+), f_k (-), and the two adjacent midpoints with weight 1/2
        gL = dF_df[:-1] - dF_df[1:] + 0.5 * (dF_dbar[:-1] + dF_dbar[1:])
        gL *= N
        inner = L[1:-1]
        # chain rule through l = exp(u) / sum(q exp(u))
        gu = inner * gL - (self.q * inner) * np.sum(gL * inner, axis=1, keepdims=True)
        return total, gu.ravel(), vals, H


def _hessian_fd(fun, v, block: int, h: float = 1e-6) -> np.ndarray:
    """Finite-difference Hessian of a block-tridiagonal problem with three colours per coordinate."""
    m = v.size
    nb = m // block
    H = np.zeros((m, m))
    slab = np.arange(nb)
    for c in range(3):
        for j in range(block):
            e = np.zeros(m)
            cols = slab[slab % 3 == c] * block + j
            e[cols] = h
            dg = (fun(v + e)[1] - fun(v - e)[1]) / (2 * h)
            rows_slab = np.arange(m) // block
            # each row slab k' sees the perturbed slab k in {k'-1, k', k'+1} with k = c mod 3
            for k in (-1, 0, 1):
                src = rows_slab + k
                ok = (src >= 0) & (src < nb) & (src % 3 == c)
                H[np.arange(m)[ok], src[ok] * block + j] = dg[ok]
    return 0.5 * (H + H.T)


def _newton_polish(fun, v, block: int, gtol: float, maxit: int):
    """Damped Newton iterations; stops when the gradient sup-norm drops below ``gtol``."""
    f, g = fun(v)
    steps = 0
    stalled = 0
    for steps in range(1, maxit + 1):
        gnorm = np.max(np.abs(g))
        if gnorm <= gtol or stalled >= 8:
            return v, steps - 1
        H = _hessian_fd(fun, v, block)
        if not np.all(np.isfinite(H)):
            return v, steps - 1
        mu = 0.0
        eye = np.eye(v.size)
        for _ in range(80):
            try:
                c = np.linalg.cholesky(H + mu * eye)
                break
            except np.linalg.LinAlgError:
                mu = max(2 * mu, 1e-8 * max(1.0, np.max(np.abs(np.diag(H)))))
        else:
            return v, steps - 1
        step = -np.linalg.solve(c.T, np.linalg.solve(c, g))
        a = 1.0
        for _ in range(40):
            f_new, g_new = fun(v + a * step)
            # near the optimum value changes fall below round-off; fall back on the gradient
            if f_new <= f + 1e-4 * a * np.dot(g, step) or (
                f_new <= f + 1e-13 * abs(f) and np.max(np.abs(g_new)) < np.max(np.abs(g))
            ):
                break
            a *= 0.5
        else:
            return v, steps
        stalled = stalled + 1 if np.max(np.abs(g_new)) > 0.5 * gnorm else 0
        v, f, g = v + a * step, f_new, g_new
    return v, steps


def _likelihood_endpoint(p, q):
    p = check_probability(p)
    flag = bool(np.any(p <= 0))
    ell = np.maximum(p / q, BOUNDARY_FLOOR)
    ell = ell / np.dot(q, ell)
    return ell, flag


def benamou_brenier(p0, p1, phi, gen: Generator, q, N: int = 32, opts: GeodesicOptions | None = None) -> GeodesicResult:
    """Minimize ``sum_k N ||l_{k+1} - l_k||^2_{H-1_Theta(lbar_k)}`` over interior slices.

    ``lbar_k`` is the arithmetic midpoint of adjacent slices.  Interior slices
    are log-parametrized so they stay positive and mean one.  ``W`` is the
    square root of the optimal action; ``action_residual`` is the sup-norm of
    the action gradient in the scaled variables, relative to the action.
    """
    phi = parse_phi(phi)
    opts = opts or GeodesicOptions()
    require_detailed_balance(gen, q)
    q = np.asarray(q, dtype=float)
    if N < 2:
        raise ChainError("need at least two slices")
    ell0, f0 = _likelihood_endpoint(p0, q)
    ell1, f1 = _likelihood_endpoint(p1, q)
    times = np.linspace(0.0, 1.0, N + 1)
    n = gen.n

    if np.allclose(ell0, ell1, rtol=0, atol=1e-15):
        L = np.tile(ell0, (N + 1, 1))
        return GeodesicResult(0.0, times, L, L * q, np.zeros((N, n)), np.zeros(N), 0.0, f0 or f1, 0)

    act = _Action(gen, q, phi, ell0, ell1, N)
    straight = (1 - times[1:-1, None]) * ell0 + times[1:-1, None] * ell1
    u_init = np.log(straight).ravel()
    # variables are offsets from the straight line in units of the endpoint
    # log-displacement, which keeps the problem well scaled for short geodesics
    sigma = float(min(1.0, np.max(np.abs(np.log(ell1) - np.log(ell0)))))
    scale, _, _, _ = act.value_grad(u_init)

    def fun(v):
        try:
            with np.errstate(over="raise", under="ignore", invalid="raise", divide="raise"):
                val, g, _, _ = act.value_grad(u_init + sigma * v)
        except (ChainError, FloatingPointError):
            # trial point left the positive cone numerically; reject it
            return np.inf, np.full_like(v, np.nan)
        return val / scale, sigma * g / scale

    best = None
    for r in range(max(1, opts.restarts)):
        v0 = np.zeros_like(u_init)
        if r > 0:
            rng = np.random.default_rng([opts.seed, r])
            v0 = (np.sin(np.pi * times[1:-1])[:, None] * rng.normal(0.0, 0.3, (N - 1, n))).ravel()
        v, its = v0, 0
        # alternate quasi-Newton sweeps with Newton polishing; a few rounds
        # recover the cases where the finite-difference Hessian stalls early
        for _ in range(4):
            res = minimize(
                fun, v, jac=True, method="L-BFGS-B",
                options={"maxiter": opts.lbfgs_iter, "ftol": 0.0, "gtol": opts.tol * 1e-2, "maxcor": 20},
            )
            v, newton_steps = _newton_polish(fun, res.x, n, opts.tol * 1e-2, opts.newton_iter)
            its += res.nit + newton_steps
            if np.max(np.abs(fun(v)[1])) <= opts.tol * 1e-2:
                break
        val = fun(v)[0]
        if best is None or val < best[0]:
            best = (val, v, its)
    _, vbest, iterations = best
    u = u_init + sigma * vbest
    total, g, vals, H = act.value_grad(u)
    resid = float(sigma * np.max(np.abs(g)) / total) if total > 0 else 0.0
    if opts.strict and resid > opts.tol:
        raise OptFailed(f"geodesic solve stopped with gradient residual {resid:.3e} > {opts.tol:.1e}")
    L = act.slices(u)
    message = "converged" if resid <= opts.tol else "residual above tolerance"
    return GeodesicResult(
        float(np.sqrt(total)),
        times,
        L,
        L * q[None, :],
        N * H,
        N * vals,
        resid,
        f0 or f1,
        int(iterations),
        {"message": message},
    )


def geodesic_distance(p0, p1, phi, gen: Generator, q, N: int = 32, opts: GeodesicOptions | None = None) -> float:
    return benamou_brenier(p0, p1, phi, gen, q, N, opts).distance


@dataclass
class RicciEstimate:
    """Smallest midpoint-convexity ratio seen; an upper bound on the true Ricci lower bound."""

    value: float
    ratios: np.ndarray
    skipped: int
    samples: int
    seed: int
    # midpoint ratios of the short geodesics placed at local-curvature minima
    targeted: np.ndarray = field(default_factory=lambda: np.zeros(0))


def entropy_second_derivative(ell, psi, phi, gen: Generator, q) -> tuple[float, float]:
    """Second time derivative of ``H`` along the geodesic leaving ``l`` with potential ``psi``, and the squared speed.

    The geodesic solves the Hamiltonian system ``dl = -div(theta_l grad psi)``,
    ``dpsi(x) = -1/2 sum_y K(x, y) (grad psi)^2 d1Theta(l(x), l(y))``; the
    quotient of the two returned numbers is the local convexity modulus in
    direction ``psi``.
    """
    phi = parse_phi(phi)
    ell = np.asarray(ell, dtype=float)
    psi = np.asarray(psi, dtype=float)
    q = np.asarray(q, dtype=float)
    K = offdiag(gen.rates)
    L = weighted_laplacian(vartheta_edge_weights(ell, phi, gen, q), gen)
    ldot = -L @ psi
    D1 = theta_weight_d1(ell[:, None], ell[None, :], phi)
    G = grad(psi)
    psidot = -0.5 * np.sum(K * G * G * D1, axis=1)
    thdot = D1 * ldot[:, None] + D1.T * ldot[None, :]
    lddot = -weighted_laplacian(thdot, gen) @ psi - L @ psidot
    e2 = np.dot(q, phi.second(ell) * ldot * ldot) + np.dot(q, phi.derivative(ell) * lddot)
    return float(e2), float(-np.dot(q, psi * (L @ psi)))


def local_curvature(ell, phi, gen: Generator, q) -> tuple[float, np.ndarray]:
    """Smallest local convexity modulus at ``l`` over all directions, with its potential.

    Both quadratic forms vanish on constants, so they are reduced to the
    differences ``e_i - e_{n-1}`` and a generalized eigenproblem is solved.
    """
    phi = parse_phi(phi)
    q = np.asarray(q, dtype=float)
    n = gen.n
    P = np.eye(n)[:, :-1] - np.eye(n)[:, -1:]
    m = n - 1

    def e2(v):
        return entropy_second_derivative(ell, v, phi, gen, q)[0]

    diag = [e2(P[:, i]) for i in range(m)]
    B = np.diag(diag)
    for i in range(m):
        for j in range(i + 1, m):
            B[i, j] = B[j, i] = 0.5 * (e2(P[:, i] + P[:, j]) - diag[i] - diag[j])
    L = weighted_laplacian(vartheta_edge_weights(ell, phi, gen, q), gen)
    G = -P.T @ (q[:, None] * L) @ P
    try:
        w, V = eigh(B, G)
    except np.linalg.LinAlgError as exc:
        raise EigenFailed(str(exc)) from exc
    psi = P @ V[:, 0]
    return float(w[0]), psi - np.dot(q, psi)


def _curvature_minima(gen, q, phi, starts: int, seed: int, bound: float = 8.0):
    """Multi-start search for points of smallest local curvature, in log-likelihood coordinates."""
    n = gen.n

    def ell_of(u):
        w = np.exp(u - u.max())
        return w / np.dot(q, w)

    def obj(u):
        try:
            return local_curvature(ell_of(u), phi, gen, q)[0]
        except (ChainError, FloatingPointError):
            return np.inf

    found = []
    for r in range(starts):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1 << 20, r]))
        u0 = rng.normal(0.0, 1.5, n)
        res = minimize(obj, u0, method="L-BFGS-B", bounds=[(-bound, bound)] * n)
        if np.isfinite(res.fun):
            found.append((float(res.fun), ell_of(res.x)))
    return found


def _short_geodesic_ratio(ell, psi, phi, gen, q, N, opts, reach: float = 0.05):
    """Midpoint ratio of a short geodesic centred at ``l`` in the direction of ``psi``."""
    L = weighted_laplacian(vartheta_edge_weights(ell, phi, gen, q), gen)
    v = -L @ psi
    eps = reach * np.min(ell) / np.max(np.abs(v))
    geo = benamou_brenier((ell - eps * v) * q, (ell + eps * v) * q, phi, gen, q, N, opts)
    if geo.distance <= 1e-12:
        return None
    return midpoint_ratio(geo, q, phi)


def midpoint_ratio(geo: GeodesicResult, q, phi) -> float:
    """``8 [H(P0)/2 + H(P1)/2 - H(P_{1/2})] / W^2`` along a computed geodesic (``N`` even)."""
    N = len(geo.times) - 1
    if N % 2:
        raise ChainError("midpoint ratio needs an even number of slices")
    P = geo.probabilities
    h0, h1, hm = (phi_entropy(P[i], q, phi) for i in (0, N, N // 2))
    return 8.0 * (0.5 * h0 + 0.5 * h1 - hm) / geo.distance**2


def subsegment_ratios(geo: GeodesicResult, q, phi) -> np.ndarray:
    """Midpoint ratios of every sub-geodesic between slices ``i < j`` with ``j - i`` even.

    A restriction of a constant-speed geodesic is again one, of length
    ``W (j - i) / N``, so each sub-segment is a further sample of the
    convexity modulus at no extra solve.
    """
    phi = parse_phi(phi)
    N = len(geo.times) - 1
    H = np.array([phi_entropy(p, q, phi) for p in geo.probabilities])
    i, j = np.triu_indices(N + 1, k=2)
    keep = (j - i) % 2 == 0
    i, j = i[keep], j[keep]
    m = (i + j) // 2
    length = geo.distance * (j - i) / N
    return 8.0 * (0.5 * H[i] + 0.5 * H[j] - H[m]) / length**2


def random_endpoint(rng, n: int, concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(n, concentration))


def ricci_lower_bound_estimate(
    gen: Generator, q, phi, samples: int = 20, N: int = 32, seed: int = 0, opts: GeodesicOptions | None = None,
    concentration: float = 1.0, subsegments: bool = True, targeted: int = 4, threads: int = 1,
) -> RicciEstimate:
    """Minimum midpoint ratio over random and targeted geodesics.

    Random sample ``i`` draws its endpoints from ``SeedSequence([seed, i])``,
    so the samples for a larger count contain those for a smaller one and
    the estimate is nonincreasing in ``samples``.  With ``subsegments`` each
    geodesic contributes the minimum over all its even sub-segments;
    otherwise only the full midpoint ratio.

    ``targeted`` multi-start searches locate the points where the local
    convexity modulus is smallest; a short geodesic through each such point,
    along its worst direction, adds one more midpoint ratio.  Random
    sampling alone approaches the infimum slowly.  Solves run on
    ``threads`` workers; the result does not depend on the worker count.
    """
    phi = parse_phi(phi)
    require_detailed_balance(gen, q)
    q = np.asarray(q, dtype=float)
    if N % 2:
        raise ChainError("midpoint ratio needs an even number of slices")

    def one(i):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        p0 = random_endpoint(rng, gen.n, concentration)
        p1 = random_endpoint(rng, gen.n, concentration)
        geo = benamou_brenier(p0, p1, phi, gen, q, N, opts)
        if geo.distance <= 1e-12:
            return None
        if subsegments:
            return float(subsegment_ratios(geo, q, phi).min())
        return midpoint_ratio(geo, q, phi)

    def aimed(point):
        ell = point[1]
        _, psi = local_curvature(ell, phi, gen, q)
        return _short_geodesic_ratio(ell, psi, phi, gen, q, N, opts)

    points = _curvature_minima(gen, q, phi, targeted, seed) if targeted > 0 else []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(one, range(samples)))
            aim = list(ex.map(aimed, points))
    else:
        out = [one(i) for i in range(samples)]
        aim = [aimed(pt) for pt in points]
    ratios = np.array([r for r in out if r is not None])
    aim = np.array([r for r in aim if r is not None])
    skipped = sum(r is None for r in out)
    pool = np.concatenate([ratios, aim])
    value = float(pool.min()) if pool.size else float("inf")
    return RicciEstimate(value, ratios, skipped, samples, int(seed), aim)


@dataclass
class HWIReport:
    distance: float
    fisher: float
    entropy0: float
    entropy1: float
    kappa: float
    kappa_source: str
    lhs: float
    rhs: float
    sharp_bracket: float
    sharp_rhs: float
    tol: float
    psi0_boundary_max: float = 0.0

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + self.tol

    @property
    def sharp_holds(self) -> bool:
        return self.lhs <= self.sharp_rhs + self.tol

    @property
    def bracket_ok(self) -> bool:
        return self.sharp_bracket <= np.sqrt(self.fisher) + self.tol


def hwi_check(
    p0, p1, kappa: float, phi, gen: Generator, q, N: int = 32, opts: GeodesicOptions | None = None,
    kappa_source: str = "user", tol: float | None = None,
) -> HWIReport:
    """Evaluate both sides of ``H0 - H1 <= sqrt(I0) W - kappa W^2 / 2`` and of its sharp form.

    The sharp bracket is the unit-speed entropy descent rate at ``t = 0``,
    ``-<phi(l0), psi0>_{H1_Theta} / ||psi0||_{H1_Theta}``, with ``psi0`` the
    potential of the geodesic's first step measured with the weights at ``l0``.
    """
    phi = parse_phi(phi)
    opts = opts or GeodesicOptions()
    q = np.asarray(q, dtype=float)
    p0 = check_probability(p0, gen.n, interior=True)
    geo = benamou_brenier(p0, p1, phi, gen, q, N, opts)
    W = geo.distance
    ell0 = p0 / q
    I0 = fisher_information(ell0, phi, gen, q)
    H0 = phi_entropy(p0, q, phi)
    H1 = phi_entropy(geo.probabilities[-1], q, phi)
    lhs = H0 - H1
    rhs = np.sqrt(max(I0, 0.0)) * W - 0.5 * kappa * W * W
    if W > 0:
        d = N * (geo.likelihoods[1] - geo.likelihoods[0])
        psi0 = weighted_potential(d, ell0, phi, gen, q)
        f = phi.derivative(ell0)
        speed = np.sqrt(weighted_h1_inner(psi0, psi0, ell0, phi, gen, q))
        bracket = -weighted_h1_inner(f, psi0, ell0, phi, gen, q) / speed
    else:
        bracket = 0.0
    sharp = bracket * W - 0.5 * kappa * W * W
    if tol is None:
        # optimizer accuracy on W propagates through both W terms
        tol = 10 * opts.tol * max(1.0, abs(H0)) + (np.sqrt(max(I0, 0.0)) + abs(kappa) * W) * W * 1e-6
    return HWIReport(W, I0, H0, H1, float(kappa), kappa_source, lhs, rhs, float(bracket), float(sharp), float(tol))
