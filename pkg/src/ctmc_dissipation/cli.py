"""Command-line front end.

Every subcommand reads one chain file and writes a table (CSV or JSON).
CSV output starts with a ``# generated`` timestamp line (dropped by
``--no-header``) and a ``# config`` line echoing the resolved settings, and
ends with ``# key=value`` summary lines.  JSON carries the same content
under ``config``, ``columns``, ``rows`` and ``summary``.

Exit status: 0 on success or PASS, 1 when a check FAILs, 2 on usage or
input errors, including geometry commands on chains without detailed
balance.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .calculus import require_detailed_balance
from .chain import Generator, evolve_marginals, is_detailed_balance, spectral_gap, stationary_distribution
from .chainfile import load_chain
from .entropy import de_bruijn_report, mlsi_constant, poincare_constant
from .errors import ChainError, NotDetailedBalance, OptFailed
from .phi import parse_phi
from .trajectory import compensator_test, ergodic_test, martingale_test_reversed_likelihood
from .transport import (
    GeodesicOptions,
    TangentRepresentation,
    benamou_brenier,
    edi_gap,
    gradient_flow_field,
    hwi_check,
    ricci_lower_bound_estimate,
    steepest_descent_experiment,
)

THREADS_ENV = "CTMC_DISSIPATION_THREADS"
GEOMETRY = ("metric", "gradient-flow", "descent", "hwi", "ricci")
DEFAULT_TOL = {
    "dissipation": 1e-8,
    "debruijn": 1e-8,
    "gradient-flow": 1e-10,
    "descent": 1e-10,
    "metric": 1e-7,
    "hwi": None,
    "ricci": 1e-7,
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    chain: str
    command: str
    phi: str = "xlogx"
    T: float = 5.0
    steps: int = 2000
    paths: int = 100_000
    seed: int | None = None
    output: str | None = None
    format: str = "csv"
    tol: float | None = None
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def check(self) -> None:
        if not self.T > 0:
            raise UsageError("--T must be positive")
        if self.steps < 2:
            raise UsageError("--steps must be at least 2")
        if self.paths < 1:
            raise UsageError("--paths must be at least 1")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise UsageError("--threads must be at least 1")
        if self.format not in ("csv", "json"):
            raise UsageError("--format must be csv or json")


@dataclass
class Table:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)
    # None when the command has nothing to verify
    passed: bool | None = None


def _num(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    return x


def _cell(x) -> str:
    x = _num(x)
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _json_value(x):
    x = _num(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_json_value(v) for v in x]
    if isinstance(x, dict):
        return {k: _json_value(v) for k, v in x.items()}
    return x


def render(table: Table, cfg: RunConfig, header: bool) -> str:
    conf = {k: v for k, v in asdict(cfg).items() if k not in ("output", "format", "extra", "threads")}
    conf.update(cfg.extra)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    if cfg.format == "json":
        doc = {}
        if header:
            doc["generated"] = stamp
        doc["version"] = __version__
        doc["config"] = _json_value(conf)
        doc["columns"] = table.columns
        doc["rows"] = [[_json_value(c) for c in r] for r in table.rows]
        doc["summary"] = _json_value(table.summary)
        if table.passed is not None:
            doc["verdict"] = "PASS" if table.passed else "FAIL"
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    if header:
        buf.write(f"# generated {stamp} ctmc-dissipation {__version__}\n")
    buf.write("# config " + json.dumps(_json_value(conf), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_cell(c) for c in r])
    for k, v in table.summary.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            v = ";".join(_cell(c) for c in v)
        buf.write(f"# {k}={_cell(v)}\n")
    if table.passed is not None:
        buf.write(f"# verdict={'PASS' if table.passed else 'FAIL'}\n")
    return buf.getvalue()


def _vector(text: str | None, n: int, what: str):
    if text is None:
        return None
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise UsageError(f"{what}: expected comma-separated numbers") from exc
    if v.shape != (n,):
        raise UsageError(f"{what}: expected {n} entries, got {v.size}")
    return v


def _initial(cf, args, n, required=True):
    p = _vector(getattr(args, "p0", None), n, "--p0")
    if p is None:
        p = cf.initial
    if p is None and required:
        raise UsageError("an initial law is needed: give 'initial' in the chain file or --p0")
    return p


def _random_interior(rng, n):
    return rng.dirichlet(np.full(n, 2.0))


def cmd_validate(gen: Generator, cf, cfg, args) -> Table:
    q = stationary_distribution(gen)
    db = is_detailed_balance(gen, q)
    rows = [[i, gen.names[i], q[i], gen.exit_rates[i]] for i in range(gen.n)]
    x, y = db.witness if db.witness is not None else (None, None)
    summary = {
        "states": gen.n,
        "irreducible": True,
        "detailed_balance": db.holds,
        "balance_violation": db.violation,
    }
    if not db.holds:
        summary["violation_edge"] = f"{gen.names[x]}->{gen.names[y]}"
    return Table(["state", "label", "stationary", "exit_rate"], rows, summary)


def cmd_stationary(gen, cf, cfg, args) -> Table:
    q = stationary_distribution(gen)
    resid = float(np.max(np.abs(gen.rates.T @ q)))
    return Table(["state", "label", "stationary"], [[i, gen.names[i], q[i]] for i in range(gen.n)], {"residual": resid})


def cmd_evolve(gen, cf, cfg, args) -> Table:
    p0 = _initial(cf, args, gen.n)
    grid = np.linspace(0.0, cfg.T, cfg.steps + 1)
    curve = evolve_marginals(gen, p0, grid)
    rows = [[t, *p] for t, p in zip(grid, curve.values)]
    drift = float(np.max(np.abs(curve.values.sum(axis=1) - 1.0)))
    return Table(["t", *[f"p[{s}]" for s in gen.names]], rows, {"mass_drift": drift})


def cmd_dissipation(gen, cf, cfg, args) -> Table:
    p0 = _initial(cf, args, gen.n)
    q = stationary_distribution(gen)
    rep = de_bruijn_report(gen, p0, q, cfg.phi, cfg.T, cfg.steps)
    tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL["dissipation"]
    summary = {
        "entropy_drop": rep.entropy[0] - rep.entropy[-1],
        "integral": rep.integral,
        "residual": rep.balance_residual,
        "monotone": rep.monotone,
        "tol": tol,
    }
    rows = [list(r) for r in rep.rows()]
    return Table(["t", "entropy", "rate"], rows, summary, rep.balance_residual <= tol)


def cmd_constants(gen, cf, cfg, args) -> Table:
    q = stationary_distribution(gen)
    alpha = poincare_constant(gen, q)
    est = mlsi_constant(gen, q, restarts=args.restarts, seed=cfg.seed)
    rows = [
        ["spectral_gap", spectral_gap(gen, q)],
        ["poincare_alpha", alpha],
        ["mlsi_beta", est.value],
        ["mlsi_distinct_minima", est.distinct_minima],
        ["mlsi_at_linearization", est.attained_at_linearization],
    ]
    return Table(["quantity", "value"], rows, {"mlsi_restarts": est.restarts})


def _report_table(rep) -> Table:
    rows = [[c, e, s, rep.target, z] for c, e, s, z in zip(rep.checkpoints, rep.estimate, rep.stderr, rep.z_scores)]
    summary = {"test": rep.name, "paths": rep.paths_used, "z_limit": rep.z_limit}
    for k, v in rep.details.items():
        summary[k] = v
    return Table(["checkpoint", "estimate", "stderr", "target", "z"], rows, summary, rep.passed)


def cmd_simulate(gen, cf, cfg, args) -> Table:
    q = stationary_distribution(gen)
    test = args.test
    if test == "reversed-likelihood":
        p0 = _initial(cf, args, gen.n)
        rep = martingale_test_reversed_likelihood(gen, p0, q, cfg.T, n_paths=cfg.paths, seed=cfg.seed, threads=cfg.threads)
    elif test == "compensator":
        p0 = _initial(cf, args, gen.n)
        rep = compensator_test(
            gen, p0, q, cfg.phi, args.measure, cfg.T, n_paths=cfg.paths, seed=cfg.seed, threads=cfg.threads
        )
    else:
        f = _vector(args.function, gen.n, "--function")
        if f is None:
            f = np.arange(gen.n, dtype=float)
        rep = ergodic_test(gen, q, f, cfg.T, seed=cfg.seed)
    return _report_table(rep)


def _opts(cfg, args) -> GeodesicOptions:
    tol = cfg.tol if cfg.tol is not None else GeodesicOptions.tol
    return GeodesicOptions(tol=tol, restarts=args.restarts, seed=cfg.seed or 0)


def cmd_metric(gen, cf, cfg, args) -> Table:
    q = stationary_distribution(gen)
    p0 = _initial(cf, args, gen.n)
    p1 = _vector(args.p1, gen.n, "--p1")
    if p1 is None:
        raise UsageError("metric needs the target law --p1")
    geo = benamou_brenier(p0, p1, cfg.phi, gen, q, args.slices, _opts(cfg, args))
    rows = list(csv.reader(io.StringIO(geo.to_csv(header=False))))
    rows = [[int(r[0]), float(r[1]), int(r[2]), float(r[3]), float(r[4])] for r in rows]
    summary = {
        "distance": geo.distance,
        "action_residual": geo.action_residual,
        "speed_variation": geo.speed_variation,
        "constant_speed": geo.constant_speed,
        "boundary_flag": geo.boundary_flag,
        "iterations": geo.iterations,
    }
    return Table(["slice_index", "t", "state", "probability", "potential"], rows, summary)


def cmd_gradient_flow(gen, cf, cfg, args) -> Table:
    q = stationary_distribution(gen)
    phi = parse_phi(cfg.phi)
    tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL["gradient-flow"]
    rng = np.random.default_rng(cfg.seed)
    points = []
    p0 = _initial(cf, args, gen.n, required=False)
    if p0 is not None and np.all(p0 > 0):
        points.append(p0 / q)
    points += [_random_interior(rng, gen.n) / q for _ in range(args.samples)]
    rows = []
    for i, ell in enumerate(points):
        lhs = gradient_flow_field(ell, phi.derivative(ell), phi, gen, q)
        rhs = gen.rates @ ell
        rows.append([i, float(np.max(np.abs(lhs - rhs))), float(np.max(np.abs(rhs)))])
    worst = max(r[1] for r in rows)
    return Table(["sample", "max_residual", "scale"], rows, {"max_residual": worst, "tol": tol}, worst <= tol)


def cmd_descent(gen, cf, cfg, args) -> Table:
    q = stationary_distribution(gen)
    phi = parse_phi(cfg.phi)
    tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL["descent"]
    rng = np.random.default_rng(cfg.seed)
    p0 = _initial(cf, args, gen.n, required=False)
    ell = p0 / q if p0 is not None and np.all(p0 > 0) else _random_interior(rng, gen.n) / q
    psi_chain = -phi.derivative(ell)
    perturb = psi_chain[None, :] + rng.normal(0.0, 1.0, (args.perturbations, gen.n))
    rep = steepest_descent_experiment(ell, perturb, phi, gen, q, tol)
    gap = edi_gap(ell, TangentRepresentation.from_potential(ell, psi_chain, phi, gen, q), phi, gen, q)
    rows = [[i, s, m] for i, (s, m) in enumerate(zip(rep.slopes, rep.margins))]
    summary = {
        "chain_slope": rep.chain_slope,
        "min_margin": float(np.min(rep.margins)),
        "edi_gap_on_flow": gap,
        "tol": tol,
    }
    return Table(["perturbation", "slope", "margin"], rows, summary, bool(rep.passed and abs(gap) <= tol))


def cmd_ricci(gen, cf, cfg, args) -> Table:
    q = stationary_distribution(gen)
    est = ricci_lower_bound_estimate(
        gen, q, cfg.phi, samples=args.samples, N=args.slices, seed=cfg.seed, opts=_opts(cfg, args),
        targeted=args.targeted, threads=cfg.threads,
    )
    rows = [["random", i, r] for i, r in enumerate(est.ratios)]
    rows += [["targeted", i, r] for i, r in enumerate(est.targeted)]
    return Table(["kind", "sample", "ratio"], rows, {"kappa_hat": est.value, "skipped": est.skipped})


def cmd_hwi(gen, cf, cfg, args) -> Table:
    q = stationary_distribution(gen)
    p0 = _initial(cf, args, gen.n)
    p1 = _vector(args.p1, gen.n, "--p1")
    if p1 is None:
        raise UsageError("hwi needs the target law --p1")
    opts = _opts(cfg, args)
    if args.kappa is None:
        est = ricci_lower_bound_estimate(
            gen, q, cfg.phi, samples=args.samples, N=args.slices, seed=cfg.seed, opts=opts,
            targeted=args.targeted, threads=cfg.threads,
        )
        kappa, source = est.value, "estimate"
    else:
        kappa, source = args.kappa, "user"
    rep = hwi_check(p0, p1, kappa, cfg.phi, gen, q, args.slices, opts, source, cfg.tol)
    rows = [
        ["entropy_drop", rep.lhs],
        ["hwi_rhs", rep.rhs],
        ["sharp_rhs", rep.sharp_rhs],
        ["distance", rep.distance],
        ["fisher", rep.fisher],
        ["sharp_bracket", rep.sharp_bracket],
        ["kappa", rep.kappa],
    ]
    summary = {
        "kappa_source": rep.kappa_source,
        "holds": rep.holds,
        "sharp_holds": rep.sharp_holds,
        "bracket_ok": rep.bracket_ok,
        "tol": rep.tol,
    }
    return Table(["quantity", "value"], rows, summary, bool(rep.holds and rep.bracket_ok))


COMMANDS = {
    "validate": cmd_validate,
    "stationary": cmd_stationary,
    "evolve": cmd_evolve,
    "dissipation": cmd_dissipation,
    "debruijn": cmd_dissipation,
    "constants": cmd_constants,
    "simulate": cmd_simulate,
    "metric": cmd_metric,
    "gradient-flow": cmd_gradient_flow,
    "descent": cmd_descent,
    "hwi": cmd_hwi,
    "ricci": cmd_ricci,
}
RANDOMIZED = ("constants", "simulate", "gradient-flow", "descent", "ricci", "hwi", "metric")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("chain", help="chain description file (JSON)")
    common.add_argument("--phi", default="xlogx", help="xlogx, quadratic or renyi:<m> (default xlogx)")
    common.add_argument("--T", type=float, default=5.0, help="time horizon")
    common.add_argument("--steps", type=int, default=2000, help="time-grid intervals")
    common.add_argument("--paths", type=int, default=100_000, help="Monte Carlo paths")
    common.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed; drawn from OS entropy if omitted")
    common.add_argument("--output", "-o", default=None, help="write here instead of standard output")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--no-header", action="store_true", help="omit the timestamp line")
    common.add_argument("--threads", type=int, default=None, help=f"worker cap (default ${THREADS_ENV} or 1)")
    common.add_argument("--tol", type=float, default=None, help="override the command's pass tolerance")
    common.add_argument("--p0", default=None, help="initial law as comma-separated probabilities")

    parser = _Parser(prog="ctmc-dissipation", description="Dissipation and transport diagnostics for finite chains.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("validate", "stationary", "evolve"):
        sub.add_parser(name, parents=[common])
    sub.add_parser("dissipation", parents=[common], aliases=["debruijn"])
    p = sub.add_parser("constants", parents=[common])
    p.add_argument("--restarts", type=int, default=8)
    p = sub.add_parser("simulate", parents=[common])
    p.add_argument("--test", choices=("reversed-likelihood", "compensator", "ergodic"), required=True)
    p.add_argument("--measure", choices=("Q", "P"), default="Q", help="reference measure for --test compensator")
    p.add_argument("--function", default=None, help="state function for --test ergodic (default: state index)")
    geo_common = argparse.ArgumentParser(add_help=False)
    geo_common.add_argument("--slices", type=int, default=32)
    geo_common.add_argument("--restarts", type=int, default=GeodesicOptions.restarts)
    p = sub.add_parser("metric", parents=[common, geo_common])
    p.add_argument("--p1", default=None)
    p = sub.add_parser("gradient-flow", parents=[common])
    p.add_argument("--samples", type=int, default=20)
    p = sub.add_parser("descent", parents=[common])
    p.add_argument("--perturbations", type=int, default=1000)
    for name in ("ricci", "hwi"):
        p = sub.add_parser(name, parents=[common, geo_common])
        p.add_argument("--samples", type=int, default=20)
        p.add_argument("--targeted", type=int, default=4)
        if name == "hwi":
            p.add_argument("--p1", default=None)
            p.add_argument("--kappa", type=float, default=None, help="curvature bound; estimated when omitted")
    return parser


def _threads(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"{THREADS_ENV}={env!r} is not an integer") from exc
    return 1


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        command = "dissipation" if args.command == "debruijn" else args.command
        cfg = RunConfig(
            chain=args.chain,
            command=command,
            phi=parse_phi(args.phi).name,
            T=args.T,
            steps=args.steps,
            paths=args.paths,
            seed=args.seed,
            output=args.output,
            format=args.format,
            tol=args.tol,
            threads=_threads(args.threads),
        )
        cfg.check()
        if cfg.seed is None and command in RANDOMIZED:
            cfg.seed = int(np.random.SeedSequence().entropy % 2**64)
        for k in ("slices", "restarts", "samples", "targeted", "perturbations", "test", "measure", "kappa"):
            if hasattr(args, k):
                cfg.extra[k] = getattr(args, k)
        cf = load_chain(cfg.chain)
        gen = cf.generator
        if command in GEOMETRY:
            try:
                require_detailed_balance(gen, stationary_distribution(gen))
            except NotDetailedBalance as exc:
                raise UsageError(f"'{command}' works on reversible chains only; {exc}") from exc
        table = COMMANDS[command](gen, cf, cfg, args)
    except UsageError as exc:
        print(f"ctmc-dissipation: error: {exc}", file=sys.stderr)
        return 2
    except OptFailed as exc:
        print(f"ctmc-dissipation: optimizer failed: {exc}", file=sys.stderr)
        return 1
    except ChainError as exc:
        print(f"ctmc-dissipation: error: {exc}", file=sys.stderr)
        return 2

    text = render(table, cfg, header=not args.no_header)
    if cfg.output:
        with open(cfg.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if table.passed in (None, True) else 1


def main() -> None:
    sys.exit(run())
