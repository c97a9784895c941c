"""Finite-state continuous-time Markov chains.

A chain is described by its rate matrix ``K`` (off-diagonal entries are jump
rates, rows sum to zero).  Probability vectors are plain 1-d ``numpy`` arrays;
:func:`check_probability` validates them and :func:`is_boundary` reports
whether one sits on the boundary of the simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    ChainError,
    NegativeOffDiagonal,
    NegativeTime,
    Reducible,
    RowSumNonzero,
    SolveFailed,
)

STRUCTURAL_TOL = 1e-12
ANALYTIC_TOL = 1e-9
# Poisson tail mass discarded by the uniformization series.
POISSON_TAIL = 1e-15
# Largest Poisson mean summed in one piece; longer horizons are split and
# recombined through the semigroup property so that exp(-mean) never underflows.
MAX_POISSON_MEAN = 32.0


@dataclass(frozen=True, eq=False)
class Generator:
    """Validated rate matrix of an irreducible chain.  Build with :func:`validate_generator`."""

    rates: np.ndarray
    names: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.rates.shape[0]

    @cached_property
    def support(self) -> np.ndarray:
        """Boolean n x n mask of the directed edge set {(x, y): x != y, rate > 0}."""
        mask = self.rates > 0
        np.fill_diagonal(mask, False)
        return mask

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.support)

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.rates)

    def key(self) -> bytes:
        return self.rates.tobytes()

    def __repr__(self) -> str:
        return f"Generator(n={self.n}, names={list(self.names)})"


def _reaches_all(adj: np.ndarray) -> bool:
    """Breadth-first search from state 0 over a dense adjacency matrix."""
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[0] = True
    frontier = seen.copy()
    while frontier.any():
        frontier = adj[frontier].any(axis=0) & ~seen
        seen |= frontier
    return bool(seen.all())


def validate_generator(rates, names=None) -> Generator:
    """Check the rate-matrix axioms and return an immutable :class:`Generator`.

    Row sums within ``1e-12`` (relative to the largest rate) are zeroed exactly
    by resetting the diagonal; larger residuals are rejected.
    """
    K = np.array(rates, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ChainError(f"rate matrix must be square, got shape {K.shape}")
    n = K.shape[0]
    if n < 2:
        raise ChainError("need at least two states")
    if not np.all(np.isfinite(K)):
        raise ChainError("rate matrix has non-finite entries")

    off = K - np.diag(np.diag(K))
    if np.any(off < 0):
        x, y = np.argwhere(off < 0)[0]
        raise NegativeOffDiagonal(f"rate ({x}, {y}) = {K[x, y]} is negative")

    scale = max(1.0, float(np.max(np.abs(K))))
    row_sums = K.sum(axis=1)
    bad = np.abs(row_sums) > STRUCTURAL_TOL * scale
    if np.any(bad):
        x = int(np.argmax(np.abs(row_sums)))
        raise RowSumNonzero(f"row {x} sums to {row_sums[x]:.3e}")
    np.fill_diagonal(K, -off.sum(axis=1))

    adj = off > 0
    if not (_reaches_all(adj) and _reaches_all(adj.T)):
        n_comp, _ = connected_components(adj, directed=True, connection="strong")
        raise Reducible(f"positive-rate graph has {n_comp} strongly connected components")

    if names is None:
        names = tuple(str(i) for i in range(n))
    names = tuple(str(s) for s in names)
    if len(names) != n:
        raise ChainError(f"{len(names)} state names for {n} states")
    K.setflags(write=False)
    return Generator(K, names)


def generator_from_triples(n: int, triples, names=None) -> Generator:
    """Build a generator from sparse ``(i, j, rate)`` triples (0-based).

    Diagonal triples are optional; when given they must agree with the
    off-diagonal row sums to ``1e-12``.
    """
    K = np.zeros((n, n))
    diag = {}
    for i, j, r in triples:
        i, j = int(i), int(j)
        if i == j:
            diag[i] = float(r)
        else:
            K[i, j] += float(r)
    for i, d in diag.items():
        expected = -K[i].sum()
        if abs(d - expected) > STRUCTURAL_TOL * max(1.0, abs(expected)):
            raise RowSumNonzero(f"explicit diagonal {d} at state {i} disagrees with {expected}")
    np.fill_diagonal(K, -K.sum(axis=1))
    return validate_generator(K, names)


def check_probability(p, n: int | None = None, *, interior: bool = False) -> np.ndarray:
    """Return ``p`` as a float array after checking it is a probability vector.

    Entries must be nonnegative and sum to one within ``1e-12``.  With
    ``interior=True`` zero entries are rejected.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or (n is not None and p.shape[0] != n):
        raise ChainError(f"probability vector has shape {p.shape}, expected ({n},)")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ChainError("probability vector has negative or non-finite entries")
    if abs(p.sum() - 1.0) > STRUCTURAL_TOL * p.shape[0]:
        raise ChainError(f"probability vector sums to {p.sum()!r}")
    if interior and np.any(p <= 0):
        raise ChainError("probability vector is on the boundary of the simplex")
    return p


def is_boundary(v) -> bool:
    return bool(np.any(np.asarray(v) <= 0))


def stationary_distribution(g: Generator) -> np.ndarray:
    """Invariant law ``q`` with ``K^T q = 0`` and ``sum(q) = 1``.

    Solves the balance equations with the last one replaced by the
    normalisation row, followed by one step of iterative refinement.
    """
    n = g.n
    A = g.rates.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        q = np.linalg.solve(A, b)
        q += np.linalg.solve(A, b - A @ q)
    except np.linalg.LinAlgError as exc:
        raise SolveFailed(str(exc)) from exc
    resid = np.max(np.abs(g.rates.T @ q))
    norm = np.max(np.abs(g.rates).sum(axis=1))
    if not np.all(q > 0) or resid > 1e-12 * norm * max(1.0, n / 8):
        raise SolveFailed(f"stationary solve inaccurate: residual {resid:.3e}, min entry {q.min():.3e}")
    return q / q.sum()


@dataclass(frozen=True)
class DetailedBalance:
    holds: bool
    violation: float
    witness: tuple[int, int]

    def __bool__(self) -> bool:
        return self.holds


def is_detailed_balance(g: Generator, q, tol: float = 1e-10) -> DetailedBalance:
    """Largest violation of ``q(x) K(x, y) = q(y) K(y, x)`` and the pair attaining it."""
    flux = np.asarray(q)[:, None] * g.rates
    gap = np.abs(flux - flux.T)
    x, y = np.unravel_index(int(np.argmax(gap)), gap.shape)
    v = float(gap[x, y])
    return DetailedBalance(v <= tol, v, (int(x), int(y)))


def adjoint_generator(g: Generator, q) -> Generator:
    """Rates of the time-reversed chain, ``K^(y, z) = q(z) K(z, y) / q(y)``."""
    q = np.asarray(q, dtype=float)
    Kh = g.rates.T * q[None, :] / q[:, None]
    np.fill_diagonal(Kh, 0.0)
    np.fill_diagonal(Kh, -Kh.sum(axis=1))
    return validate_generator(Kh, g.names)


def _poisson_weights(mean: float) -> np.ndarray:
    w = math.exp(-mean)
    weights = [w]
    total = w
    k = 0
    kmax = int(mean + 60.0 * math.sqrt(mean) + 60)
    while total < 1.0 - POISSON_TAIL and k < kmax:
        k += 1
        w *= mean / k
        weights.append(w)
        total += w
    return np.array(weights)


def _uniformized(g: Generator):
    lam = float(np.max(g.exit_rates))
    Pi = np.eye(g.n) + g.rates / lam
    np.clip(Pi, 0.0, None, out=Pi)
    return lam, Pi


def transition_matrix(g: Generator, t: float) -> np.ndarray:
    """Transition probabilities ``rho_t(x, y) = P(X_t = y | X_0 = x)`` by uniformization.

    ``rho_t = sum_k Pois(lam t; k) Pi^k`` with ``Pi = I + K / lam``; the series is
    cut once the discarded Poisson mass drops below ``1e-15`` and renormalised by
    the retained mass.
    """
    if t < 0:
        raise NegativeTime(f"t = {t} < 0")
    n = g.n
    if t == 0:
        return np.eye(n)
    lam, Pi = _uniformized(g)
    mean = lam * t
    pieces = max(1, math.ceil(mean / MAX_POISSON_MEAN))
    w = _poisson_weights(mean / pieces)
    term = np.eye(n)
    P = w[0] * term
    for wk in w[1:]:
        term = term @ Pi
        P += wk * term
    P /= w.sum()
    if pieces > 1:
        P = np.linalg.matrix_power(P, pieces)
    return P


def propagate(g: Generator, p, t: float) -> np.ndarray:
    """Law at time ``t`` of the chain started from ``p`` (row vector times ``rho_t``)."""
    if t < 0:
        raise NegativeTime(f"t = {t} < 0")
    v = np.array(p, dtype=float)
    if t == 0:
        return v
    lam, Pi = _uniformized(g)
    mean = lam * t
    pieces = max(1, math.ceil(mean / MAX_POISSON_MEAN))
    w = _poisson_weights(mean / pieces)
    wsum = w.sum()
    for _ in range(pieces):
        term = v
        acc = w[0] * term
        for wk in w[1:]:
            term = term @ Pi
            acc = acc + wk * term
        v = acc / wsum
    return v


@dataclass(frozen=True, eq=False)
class MarginalCurve:
    """Time marginals ``P(t)`` on a grid; ``values[i]`` is the law at ``grid[i]``."""

    grid: np.ndarray
    values: np.ndarray

    @property
    def boundary(self) -> np.ndarray:
        return np.any(self.values <= 0, axis=1)


@dataclass(frozen=True, eq=False)
class LikelihoodCurve:
    """Likelihood ratios ``l(t, y) = p(t, y) / q(y)`` on a grid."""

    grid: np.ndarray
    values: np.ndarray
    q: np.ndarray

    @property
    def boundary(self) -> np.ndarray:
        return np.any(self.values <= 0, axis=1)


def evolve_marginals(g: Generator, p0, grid) -> MarginalCurve:
    """Solve the forward equation ``dP/dt = K^T P`` from ``P(0) = p0`` onto ``grid``.

    Each grid increment is bridged exactly (up to series truncation) by
    uniformization; transition matrices are reused for repeated step sizes, so
    uniform grids cost one matrix build.
    """
    p0 = check_probability(p0, g.n)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ChainError("grid must be a non-empty 1-d array")
    if grid[0] < 0:
        raise NegativeTime(f"grid starts at {grid[0]} < 0")
    if np.any(np.diff(grid) <= 0):
        raise ChainError("grid must be strictly increasing")

    out = np.empty((grid.size, g.n))
    v = propagate(g, p0, float(grid[0]))
    out[0] = v
    cache: dict[float, np.ndarray] = {}
    for i, dt in enumerate(np.diff(grid), start=1):
        key = round(float(dt), 15)
        M = cache.get(key)
        if M is None:
            if len(cache) > 64:
                cache.clear()
            M = cache[key] = transition_matrix(g, float(dt))
        v = v @ M
        out[i] = v
    return MarginalCurve(grid, out)


def likelihood_curve(curve: MarginalCurve, q) -> LikelihoodCurve:
    q = np.asarray(q, dtype=float)
    return LikelihoodCurve(curve.grid, curve.values / q[None, :], q)


def spectral_gap(g: Generator, q) -> float:
    """Smallest nonzero eigenvalue of the additively symmetrised generator in ``L2(q)``."""
    q = np.asarray(q, dtype=float)
    s = np.sqrt(q)
    # q-weighted symmetric part: (q K + (q K)^T) / 2 equals q * (K + K^) / 2
    flux = q[:, None] * g.rates
    S = 0.5 * (flux + flux.T) / (s[:, None] * s[None, :])
    ev = np.linalg.eigvalsh(-S)
    return float(ev[1])


def random_generator(
    rng: np.random.Generator,
    n: int,
    *,
    reversible: bool = False,
    density: float = 1.0,
    rate_range: tuple[float, float] = (0.2, 1.5),
    max_exit: float | None = None,
) -> Generator:
    """Random irreducible generator for experiments and tests.

    Reversible chains use ``K(x, y) = r(x, y) sqrt(q(y) / q(x))`` with symmetric
    ``r`` and a random target law ``q``, so detailed balance holds by
    construction and rates stay within ``sqrt(max q / min q)`` of ``rate_range``.
    A Hamiltonian cycle is always included, which guarantees irreducibility
    whatever ``density`` is.  ``max_exit`` rescales time so that the fastest
    state leaves at that rate.
    """
    lo, hi = rate_range
    perm = rng.permutation(n)
    mask = rng.random((n, n)) < density
    for a, b in zip(perm, np.roll(perm, -1)):
        mask[a, b] = True
    np.fill_diagonal(mask, False)
    if reversible:
        mask = mask | mask.T
        q = rng.dirichlet(np.full(n, 4.0))
        r = np.triu(rng.uniform(lo, hi, (n, n)), 1)
        r = (r + r.T) * mask
        K = r * np.sqrt(q[None, :] / q[:, None])
    else:
        K = rng.uniform(lo, hi, (n, n)) * mask
    np.fill_diagonal(K, 0.0)
    if max_exit is not None:
        K *= max_exit / K.sum(axis=1).max()
    np.fill_diagonal(K, -K.sum(axis=1))
    return validate_generator(K)


CYCLE3 = ((-1.0, 1.0, 0.0), (0.0, -1.0, 1.0), (1.0, 0.0, -1.0))
