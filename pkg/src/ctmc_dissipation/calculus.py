"""Discrete calculus on the transition graph and the associated Sobolev norms.

Node functions are length-``n`` arrays.  Edge functions are dense ``n x n``
arrays indexed by ordered pairs ``(x, y)``; only entries on the edge set
(``K(x, y) > 0``) ever carry weight, because every edge integral is taken
against the conductances, which vanish elsewhere.  Storing the full square
keeps ``grad`` defined on all pairs, which is what the divergence needs on
chains where an edge exists in one direction only.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .chain import Generator, is_detailed_balance
from .errors import BoundaryLikelihood, NonpositiveArgument, NonzeroMean, NotDetailedBalance, SolveFailed
from .phi import PhiFunction, parse_phi

MEAN_TOL = 1e-12
# relative gap in phi below which Theta switches to 1 / Phi''
THETA_DIAGONAL = 1e-8


def offdiag(K: np.ndarray) -> np.ndarray:
    out = np.array(K, dtype=float)
    np.fill_diagonal(out, 0.0)
    return out


def grad(f) -> np.ndarray:
    """``grad f (x, y) = f(y) - f(x)``."""
    f = np.asarray(f, dtype=float)
    return f[None, :] - f[:, None]


def div(F, gen: Generator) -> np.ndarray:
    """``(div F)(x) = 1/2 sum_{y != x} K(x, y) [F(x, y) - F(y, x)]``."""
    F = np.asarray(F, dtype=float)
    return 0.5 * np.sum(offdiag(gen.rates) * (F - F.T), axis=1)


def weighted_div(F, weights, gen: Generator) -> np.ndarray:
    """``div(w F)`` for an edge weight ``w``."""
    W = np.asarray(weights, dtype=float) * np.asarray(F, dtype=float)
    return div(W, gen)


def conductances(gen: Generator, q) -> np.ndarray:
    """Edge measure ``c(x, y) = 1/2 K(x, y) q(x)``, zero off the edge set."""
    return 0.5 * np.asarray(q, dtype=float)[:, None] * offdiag(gen.rates)


def l2_inner(f, g, q) -> float:
    return float(np.sum(np.asarray(q) * np.asarray(f) * np.asarray(g)))


def l2_edge_inner(F, G, c) -> float:
    return float(np.sum(np.asarray(c) * np.asarray(F) * np.asarray(G)))


def dirichlet_form(f, g, gen: Generator, q) -> float:
    """``E(f, g) = -<f, K g>_Q``; not symmetric unless detailed balance holds."""
    return -l2_inner(f, gen.rates @ np.asarray(g, dtype=float), q)


def dirichlet_form_squared_differences(f, gen: Generator, q) -> float:
    """``E(f, f)`` written as ``1/2 sum_{x,y} K(y, x) q(y) (f(y) - f(x))**2``."""
    D = grad(f)
    return float(0.5 * np.sum(np.asarray(q)[:, None] * offdiag(gen.rates) * D * D))


def require_detailed_balance(gen: Generator, q, tol: float = 1e-10) -> None:
    db = is_detailed_balance(gen, q, tol)
    if not db.holds:
        x, y = db.witness
        raise NotDetailedBalance(
            f"detailed balance required: violation {db.violation:.3e} at ({gen.names[x]}, {gen.names[y]})"
        )


def h1_norm(f, gen: Generator, q) -> float:
    """``sqrt(E(f, f))``; a seminorm with or without detailed balance."""
    return float(np.sqrt(max(dirichlet_form(f, f, gen, q), 0.0)))


def h1_inner(f, g, gen: Generator, q) -> float:
    """``<grad f, grad g>`` in ``L2(edges, C)``; equals ``E(f, g)`` under detailed balance."""
    require_detailed_balance(gen, q)
    return l2_edge_inner(grad(f), grad(g), conductances(gen, q))


def _bordered(L: np.ndarray, q: np.ndarray) -> np.ndarray:
    # [[L, 1], [q^T, 0]]: the multiplier column of ones is outside Range(L),
    # the last row pins sum(q g) = 0.
    n = L.shape[0]
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = L
    A[:n, n] = 1.0
    A[n, :n] = q
    return A


@lru_cache(maxsize=256)
def _factor(key: bytes, n: int):
    M = np.frombuffer(key, dtype=float).reshape(n + 1, n + 1)
    lu = lu_factor(M, check_finite=True)
    if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * max(1.0, np.max(np.abs(M))):
        raise SolveFailed("bordered system is numerically singular")
    return lu


def solve_mean_zero(L, q, f) -> np.ndarray:
    """Solve ``L g = f`` with ``sum(q g) = 0`` for a generator-like ``L`` with constant kernel.

    ``f`` must be ``q``-mean-zero; factorizations are memoized by matrix value.
    """
    L = np.asarray(L, dtype=float)
    q = np.asarray(q, dtype=float)
    n = L.shape[0]
    A = _bordered(L, q)
    lu = _factor(A.tobytes(), n)
    rhs = np.append(np.asarray(f, dtype=float), 0.0)
    sol = lu_solve(lu, rhs)
    sol += lu_solve(lu, rhs - A @ sol)
    return sol[:n]


def mean_zero(f, q, tol: float = MEAN_TOL) -> bool:
    f = np.asarray(f, dtype=float)
    return abs(float(np.dot(q, f))) <= tol * max(1.0, float(np.max(np.abs(f), initial=0.0)))


def inverse_generator(f, gen: Generator, q) -> np.ndarray:
    """``K^{-1} f``: the ``q``-mean-zero solution of ``K g = f``."""
    if not mean_zero(f, q):
        raise NonzeroMean(f"sum(q f) = {np.dot(q, f):.3e} is not zero; f is outside Range(K)")
    return solve_mean_zero(gen.rates, q, f)


def h_minus1_norm(f, gen: Generator, q) -> float:
    """Dual norm ``||grad K^{-1} f||`` in ``L2(edges, C)``; ``inf`` when ``sum(q f) != 0``."""
    require_detailed_balance(gen, q)
    if not mean_zero(f, q):
        return float("inf")
    g = solve_mean_zero(gen.rates, q, f)
    return float(np.sqrt(max(l2_edge_inner(grad(g), grad(g), conductances(gen, q)), 0.0)))


def h_minus1_sup_ratio(f, g, gen: Generator, q) -> float:
    """The ratio ``<f, g>_Q / ||g||_{H1}`` whose supremum over ``g`` is the dual norm."""
    return l2_inner(f, g, q) / h1_norm(g, gen, q)


def theta_weight(a, b, phi: PhiFunction | str) -> np.ndarray:
    """Generalized logarithmic mean ``(a - b) / (phi(a) - phi(b))``, with ``1 / Phi''`` on the diagonal."""
    phi = parse_phi(phi)
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if np.any(a <= 0) or np.any(b <= 0):
        raise NonpositiveArgument("Theta needs strictly positive arguments")
    pa, pb = phi.derivative(a), phi.derivative(b)
    dphi = pa - pb
    near = np.abs(dphi) < THETA_DIAGONAL * (1.0 + np.abs(pa))
    safe = np.where(near, 1.0, dphi)
    off = (a - b) / safe
    diag = 1.0 / phi.second(0.5 * (a + b))
    out = np.where(near, diag, off)
    return out if out.ndim else float(out)


def theta_weight_d1(a, b, phi: PhiFunction | str) -> np.ndarray:
    """Partial derivative of ``Theta(a, b)`` in its first argument."""
    phi = parse_phi(phi)
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    pa, pb = phi.derivative(a), phi.derivative(b)
    dphi = pa - pb
    near = np.abs(dphi) < 1e-5 * (1.0 + np.abs(pa))
    safe = np.where(near, 1.0, dphi)
    th = (a - b) / safe
    off = (1.0 - th * phi.second(a)) / safe
    # expansion about the midpoint: Theta = 1/Phi''(m) + O(d^2), slope in a is -Phi'''/(2 Phi''^2)
    m = 0.5 * (a + b)
    s = phi.second(m)
    diag = -0.5 * phi.third(m) / (s * s)
    return np.where(near, diag, off)


def check_interior_likelihood(ell, q) -> np.ndarray:
    ell = np.asarray(ell, dtype=float)
    if np.any(ell <= 0) or not np.all(np.isfinite(ell)):
        raise BoundaryLikelihood("likelihood ratio must be strictly positive")
    return ell


def vartheta_edge_weights(ell, phi, gen: Generator, q) -> np.ndarray:
    """Edge weights ``theta_l(x, y) = Theta(l(x), l(y))`` as a symmetric ``n x n`` array."""
    ell = check_interior_likelihood(ell, q)
    return theta_weight(ell[:, None], ell[None, :], phi)


def weighted_laplacian(theta: np.ndarray, gen: Generator) -> np.ndarray:
    """Matrix of ``h -> div(theta grad h)`` for a symmetric weight ``theta``."""
    L = offdiag(gen.rates) * theta
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


def weighted_h1_inner(f, g, ell, phi, gen: Generator, q) -> float:
    require_detailed_balance(gen, q)
    th = vartheta_edge_weights(ell, phi, gen, q)
    return l2_edge_inner(grad(f), grad(g), th * conductances(gen, q))


def weighted_h1_norm(f, ell, phi, gen: Generator, q) -> float:
    """``||grad f||`` in ``L2(edges, theta_l C)``."""
    return float(np.sqrt(max(weighted_h1_inner(f, f, ell, phi, gen, q), 0.0)))


def weighted_potential(f, ell, phi, gen: Generator, q) -> np.ndarray:
    """Mean-zero ``h`` with ``f + div(theta_l grad h) = 0``."""
    th = vartheta_edge_weights(ell, phi, gen, q)
    return solve_mean_zero(weighted_laplacian(th, gen), q, -np.asarray(f, dtype=float))


def weighted_h_minus1_norm(f, ell, phi, gen: Generator, q) -> tuple[float, np.ndarray | None]:
    """Weighted dual norm and its optimal potential ``h``.

    Returns ``(inf, None)`` when ``sum(q f) != 0``.  Otherwise ``grad h`` is the
    unique admissible gradient flow with ``f + div(theta_l grad h) = 0`` and the
    norm is its length in ``L2(edges, theta_l C)``.
    """
    require_detailed_balance(gen, q)
    if not mean_zero(f, q):
        return float("inf"), None
    h = weighted_potential(f, ell, phi, gen, q)
    # ||grad h||^2 = <h, f>_Q by summation by parts; the edge sum is used for accuracy
    th = vartheta_edge_weights(ell, phi, gen, q)
    val = l2_edge_inner(grad(h), grad(h), th * conductances(gen, q))
    return float(np.sqrt(max(val, 0.0))), h


def modified_h_minus1_norm(f, ell, phi, gen: Generator, q) -> float:
    """``sqrt(<(1/theta_l) grad K^{-1} f, grad K^{-1} f>_C)``; dominates the weighted dual norm."""
    require_detailed_balance(gen, q)
    g = inverse_generator(f, gen, q)
    th = vartheta_edge_weights(ell, phi, gen, q)
    D = grad(g)
    return float(np.sqrt(max(l2_edge_inner(D / th, D, conductances(gen, q)), 0.0)))
