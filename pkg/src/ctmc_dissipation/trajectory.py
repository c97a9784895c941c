"""Trajectory sampling and Monte Carlo checks of the time-reversal martingales.

Paths are simulated by the exponential-holding-time (Gillespie) scheme, many
at a time.  Random streams are attached to fixed-size blocks of path indices
through ``SeedSequence([seed, block])``, so a run is bit-reproducible no matter
how blocks are spread over worker threads.

Functionals of the reversed process ``Xhat(s) = X(T - s)`` are evaluated in
forward time: ``Xhat(s)`` is the state at forward time ``T - s`` and
``int_0^s Lambda(T - u, Xhat(u)) du = int_{T-s}^T Lambda(t, X(t)) dt``.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .chain import Generator, adjoint_generator, check_probability, evolve_marginals, propagate
from .entropy import lambda_compensators_batch, phi_entropy
from .errors import ChainError, HorizonMismatch
from .phi import PhiFunction, parse_phi

BLOCK = 4096
Z_LIMIT = 4.0
FLOAT_FLOOR = 1e-12
# dense grid resolution for the compensator antiderivatives
DENSE_STEPS = 4096


@dataclass(frozen=True, eq=False)
class Path:
    """Piecewise-constant trajectory on ``[0, horizon]``; ``states[i]`` holds on ``[jump_times[i-1], jump_times[i])``."""

    horizon: float
    jump_times: np.ndarray
    states: np.ndarray
    initial: str = "P"

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        st = np.asarray(self.states, dtype=int)
        if st.size != jt.size + 1:
            raise ChainError("need exactly one more state than jump times")
        if jt.size and (np.any(np.diff(jt) <= 0) or jt[0] < 0 or jt[-1] > self.horizon):
            raise ChainError("jump times must be strictly increasing inside [0, T]")
        if np.any(st[1:] == st[:-1]):
            raise ChainError("consecutive states must differ")

    def state_at(self, t: float) -> int:
        return int(self.states[np.searchsorted(self.jump_times, t, side="right")])

    def holding(self) -> tuple[np.ndarray, np.ndarray]:
        """Sojourn states and their durations."""
        edges = np.concatenate([[0.0], self.jump_times, [self.horizon]])
        return self.states, np.diff(edges)


def sample_path(gen: Generator, initial, T: float, seed: int, tag: str = "P") -> Path:
    """One trajectory on ``[0, T]``; ``initial`` is a law or a state index."""
    if T <= 0:
        raise ChainError("horizon must be positive")
    rng = np.random.default_rng(seed)
    exit_rates = gen.exit_rates
    jump = _jump_cdf(gen)
    if np.ndim(initial) == 0:
        x = int(initial)
    else:
        x = int(rng.choice(gen.n, p=check_probability(initial, gen.n)))
    t = 0.0
    times, states = [], [x]
    while True:
        t += rng.exponential(1.0 / exit_rates[x])
        if t >= T:
            break
        x = int(np.searchsorted(jump[x], rng.random(), side="right"))
        times.append(t)
        states.append(x)
    return Path(T, np.array(times), np.array(states), tag)


def reverse_path(path: Path, T: float) -> Path:
    """``Xhat(s) = X(T - s)``."""
    if not np.isclose(path.horizon, T, rtol=0, atol=1e-12 * max(1.0, T)):
        raise HorizonMismatch(f"path horizon {path.horizon} differs from T = {T}")
    return Path(T, (T - path.jump_times)[::-1], path.states[::-1].copy(), path.initial)


def ergodic_average(path: Path, f) -> float:
    """``(1/T) int_0^T f(X(t)) dt`` computed exactly from the sojourns."""
    states, durations = path.holding()
    return float(np.dot(np.asarray(f, dtype=float)[states], durations) / path.horizon)


def _jump_cdf(gen: Generator) -> np.ndarray:
    K = np.array(gen.rates)
    np.fill_diagonal(K, 0.0)
    P = K / K.sum(axis=1, keepdims=True)
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    return cdf


@dataclass
class _BlockResult:
    start_states: np.ndarray
    at_checkpoints: np.ndarray
    integral_from_checkpoints: np.ndarray


def _simulate_block(gen, init_law, T, tcheck, rng, antideriv, start_state=None, m=BLOCK):
    """Simulate ``m`` paths and record states at forward times ``tcheck``.

    With ``antideriv`` (a callable ``t -> (len(t), n)`` array of
    ``int_0^t Lambda(u, x) du``) also returns ``int_{tcheck_j}^T Lambda(t, X(t)) dt``.
    """
    n = gen.n
    exit_rates = gen.exit_rates
    cdf = _jump_cdf(gen)
    k = len(tcheck)
    if start_state is None:
        x = np.searchsorted(np.cumsum(init_law), rng.random(m), side="right")
        x = np.minimum(x, n - 1)
    else:
        x = np.full(m, int(start_state))
    x0 = x.copy()
    at = np.full((m, k), -1, dtype=np.int64)
    # cumulative integral G(t) = int_0^t Lambda(u, X(u)) du at each checkpoint and at T
    g_check = np.zeros((m, k))
    g_total = np.zeros(m)
    idx = np.arange(m)
    t = np.zeros(m)
    A_t = antideriv(t) if antideriv is not None else None
    A_check = antideriv(np.asarray(tcheck)) if antideriv is not None else None
    while idx.size:
        hold = rng.exponential(1.0, idx.size) / exit_rates[x]
        t_next = np.minimum(t + hold, T)
        for j, tc in enumerate(tcheck):
            hit = (t <= tc) & ((tc < t_next) | ((t_next >= T) & (tc >= T)))
            if np.any(hit):
                rows = idx[hit]
                at[rows, j] = x[hit]
                if antideriv is not None:
                    g_check[rows, j] = g_total[rows] + A_check[j, x[hit]] - A_t[hit, x[hit]]
        if antideriv is not None:
            A_next = antideriv(t_next)
            r = np.arange(idx.size)
            g_total[idx] += A_next[r, x] - A_t[r, x]
        alive = t_next < T
        u = rng.random(idx.size)
        x = np.minimum((cdf[x] <= u[:, None]).sum(axis=1), n - 1)
        idx, x, t = idx[alive], x[alive], t_next[alive]
        if antideriv is not None:
            A_t = A_next[alive]
    integral = g_total[:, None] - g_check
    return _BlockResult(x0, at, integral)


def simulate(
    gen: Generator,
    init_law,
    T: float,
    tcheck,
    n_paths: int,
    seed: int,
    antideriv=None,
    start_state: int | None = None,
    threads: int = 1,
) -> _BlockResult:
    """Run ``n_paths`` paths in blocks; results do not depend on ``threads``."""
    if T <= 0:
        raise ChainError("horizon must be positive")
    tcheck = np.asarray(tcheck, dtype=float)
    if np.any(tcheck < 0) or np.any(tcheck > T):
        raise ChainError("checkpoints must lie in [0, T]")
    law = None if init_law is None else check_probability(init_law, gen.n)
    sizes = [min(BLOCK, n_paths - s) for s in range(0, n_paths, BLOCK)]

    def run(b):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        return _simulate_block(gen, law, T, tcheck, rng, antideriv, start_state, sizes[b])

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]
    return _BlockResult(
        np.concatenate([p.start_states for p in parts]),
        np.concatenate([p.at_checkpoints for p in parts]),
        np.concatenate([p.integral_from_checkpoints for p in parts]),
    )


@dataclass
class MartingaleTestReport:
    name: str
    checkpoints: list
    estimate: list
    stderr: list
    target: float
    z_scores: list
    paths_used: int
    seed: int
    z_limit: float = Z_LIMIT
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(all(abs(z) <= self.z_limit for z in self.z_scores))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = "PASS" if self.passed else "FAIL"
        d["bonferroni_note"] = (
            f"{len(self.checkpoints)} checkpoints at |z| <= {self.z_limit:g}; "
            "per-checkpoint two-sided false alarm about 6.3e-5"
        )
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["checkpoint", "estimate", "stderr", "target", "z"])
        for row in zip(self.checkpoints, self.estimate, self.stderr, self.z_scores):
            c, e, s, z = row
            w.writerow([_fmt(c), _fmt(e), _fmt(s), _fmt(self.target), _fmt(z)])
        return buf.getvalue()


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def _summarize(name, checkpoints, samples, target, seed, details=None) -> MartingaleTestReport:
    m = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.zeros(samples.shape[1])
    diff = mean - target
    # round-off floor on the deterministic parts (likelihoods, spline integrals);
    # keeps z finite and meaningful when the functional is constant up to ulps
    floor = FLOAT_FLOOR * max(1.0, abs(float(target)))
    scale = np.sqrt(se * se + floor * floor)
    z = np.where(np.abs(diff) <= floor, 0.0, diff / scale)
    return MartingaleTestReport(
        name,
        [float(c) for c in checkpoints],
        [float(v) for v in mean],
        [float(v) for v in se],
        float(target),
        [float(v) for v in z],
        int(m),
        int(seed),
        details=details or {},
    )


def default_checkpoints(T: float, k: int = 9) -> np.ndarray:
    """Reversed-time checkpoints ``s`` evenly spread on ``[0, T]``."""
    return np.linspace(0.0, T, k)


def _likelihood_at(gen, p0, q, times):
    return np.array([propagate(gen, p0, float(t)) / q for t in times])


def martingale_test_reversed_likelihood(
    gen: Generator, p0, q, T: float, checkpoints=None, n_paths: int = 100_000, seed: int = 0, threads: int = 1
) -> MartingaleTestReport:
    """Under a stationary start, ``s -> l(T - s, Xhat(s))`` has constant mean 1."""
    p0 = check_probability(p0, gen.n, interior=True)
    q = np.asarray(q, dtype=float)
    s = default_checkpoints(T) if checkpoints is None else np.asarray(checkpoints, dtype=float)
    tf = T - s
    ell = _likelihood_at(gen, p0, q, tf)
    res = simulate(gen, q, T, tf, n_paths, seed, threads=threads)
    samples = ell[np.arange(len(s))[None, :], res.at_checkpoints]
    return _summarize("reversed-likelihood", s, samples, 1.0, seed)


def conditional_martingale_test(
    gen: Generator, p0, q, T: float, s1: float, s2: float, n_paths: int = 100_000, seed: int = 0
) -> MartingaleTestReport:
    """``E[l(T - s2, Xhat(s2)) | Xhat(s1) = y] = l(T - s1, y)`` for ``s1 < s2``, one z-score per state."""
    if not 0 <= s1 < s2 <= T:
        raise ChainError("need 0 <= s1 < s2 <= T")
    p0 = check_probability(p0, gen.n, interior=True)
    q = np.asarray(q, dtype=float)
    ell = _likelihood_at(gen, p0, q, [T - s1, T - s2])
    res = simulate(gen, q, T, [T - s1, T - s2], n_paths, seed)
    y = res.at_checkpoints[:, 0]
    v = ell[1][res.at_checkpoints[:, 1]]
    est, se, z = [], [], []
    for state in range(gen.n):
        vals = v[y == state]
        mu = vals.mean()
        sd = vals.std(ddof=1) / np.sqrt(vals.size)
        est.append(float(mu))
        se.append(float(sd))
        z.append(float((mu - ell[0][state]) / sd) if sd > 0 else 0.0)
    rep = MartingaleTestReport(
        "conditional-reversed-likelihood", list(range(gen.n)), est, se, float("nan"), z, int(n_paths), int(seed)
    )
    rep.details["targets"] = [float(v) for v in ell[0]]
    return rep


def compensator_antiderivative(gen: Generator, p0, q, phi: PhiFunction, measure: str, T: float):
    """Callable ``t -> int_0^t Lambda(u, x) du`` for all states, from a cubic spline on a dense grid."""
    grid = np.linspace(0.0, T, DENSE_STEPS + 1)
    curve = evolve_marginals(gen, p0, grid)
    ells = curve.values / np.asarray(q)[None, :]
    lam_q, lam_p = lambda_compensators_batch(ells, phi, adjoint_generator(gen, q))
    lam = lam_q if measure == "Q" else lam_p
    spline = CubicSpline(grid, lam, axis=0).antiderivative()

    def antideriv(t):
        return spline(np.clip(np.asarray(t, dtype=float), 0.0, T))

    return antideriv


def compensator_test(
    gen: Generator,
    p0,
    q,
    phi: PhiFunction | str,
    measure: str,
    T: float,
    checkpoints=None,
    n_paths: int = 100_000,
    seed: int = 0,
    threads: int = 1,
) -> MartingaleTestReport:
    """Doob-Meyer check along reversed paths.

    Under ``Q`` the functional is ``Phi(l)`` with density ``Lambda_Q``; under
    ``P`` it is ``Phi(l) / l`` with density ``Lambda_P``.  Either way
    ``M(s) = functional(T - s, Xhat(s)) - int_0^s Lambda(T - u, Xhat(u)) du``
    has constant mean ``H_Phi(P(T) | Q)``.
    """
    phi = parse_phi(phi)
    measure = measure.upper()
    if measure not in ("P", "Q"):
        raise ChainError("measure must be 'P' or 'Q'")
    p0 = check_probability(p0, gen.n, interior=True)
    q = np.asarray(q, dtype=float)
    s = default_checkpoints(T) if checkpoints is None else np.asarray(checkpoints, dtype=float)
    tf = T - s
    ell = _likelihood_at(gen, p0, q, tf)
    func = phi.value(ell) if measure == "Q" else phi.value(ell) / ell
    anti = compensator_antiderivative(gen, p0, q, phi, measure, T)
    init = q if measure == "Q" else p0
    res = simulate(gen, init, T, tf, n_paths, seed, antideriv=anti, threads=threads)
    samples = func[np.arange(len(s))[None, :], res.at_checkpoints] - res.integral_from_checkpoints
    target = phi_entropy(propagate(gen, p0, T), q, phi)
    rep = _summarize(f"compensator[{phi.name},{measure}]", s, samples, target, seed)
    rep.details["min_integral"] = float(res.integral_from_checkpoints.min())
    return rep


def reversed_transition_test(
    gen: Generator, q, h: float = 1e-3, n_paths: int = 100_000, seed: int = 0
) -> MartingaleTestReport:
    """Empirical jump rates of the reversed stationary chain against ``Khat``.

    With ``X(0) ~ Q`` the pair ``(Xhat(0), Xhat(h)) = (X(h), X(0))``; the
    estimate for each ordered pair ``(y, z)`` is ``#{y -> z} / (h #{y})``.
    """
    q = np.asarray(q, dtype=float)
    res = simulate(gen, q, h, [0.0, h], n_paths, seed)
    y = res.at_checkpoints[:, 1]
    z = res.at_checkpoints[:, 0]
    Kh = adjoint_generator(gen, q).rates
    pairs, est, se, zs, khat = [], [], [], [], []
    for a in range(gen.n):
        na = int(np.sum(y == a))
        for b in range(gen.n):
            if a == b or Kh[a, b] <= 0:
                continue
            cnt = int(np.sum((y == a) & (z == b)))
            p = h * Kh[a, b]
            rate = cnt / (na * h)
            sd = np.sqrt(p * (1 - p) / na) / h
            pairs.append(f"{gen.names[a]}->{gen.names[b]}")
            est.append(rate)
            se.append(float(sd))
            zs.append(float((rate - Kh[a, b]) / sd))
            khat.append(float(Kh[a, b]))
    rep = MartingaleTestReport("reversed-transition-rates", pairs, est, se, float("nan"), zs, int(n_paths), int(seed))
    rep.details["khat"] = khat
    return rep


def ergodic_test(gen: Generator, q, f, T: float, seed: int = 0, batches: int = 20) -> MartingaleTestReport:
    """Time average of ``f`` over one long path against ``<f>_Q``, with a batch-means standard error."""
    q = np.asarray(q, dtype=float)
    f = np.asarray(f, dtype=float)
    path = sample_path(gen, q, T, seed)
    states, dur = path.holding()
    ends = np.cumsum(dur)
    starts = ends - dur
    bounds = np.linspace(0.0, T, batches + 1)
    means = np.empty(batches)
    for i in range(batches):
        lo, hi = bounds[i], bounds[i + 1]
        overlap = np.clip(np.minimum(ends, hi) - np.maximum(starts, lo), 0.0, None)
        means[i] = np.dot(f[states], overlap) / (hi - lo)
    est = ergodic_average(path, f)
    se = means.std(ddof=1) / np.sqrt(batches)
    target = float(np.dot(q, f))
    z = (est - target) / se if se > 0 else 0.0
    return MartingaleTestReport("ergodic", [float(T)], [est], [float(se)], target, [float(z)], 1, int(seed))
