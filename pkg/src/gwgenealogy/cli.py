"""Command-line driver.

Every subcommand writes CSV (to --out or standard output) headed by ``# key=value``
metadata lines that record the offspring law, seed, tolerances and caps in force, and
prints a one-line summary to standard error.  ``--plot-dir`` additionally
renders a PNG figure of the same rows.

Exit codes: 0 success, 1 usage or precondition error, 2 failed statistical or
convergence check, 3 numerical or infrastructure failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Sequence

import numpy as np

from . import asymptotics as asy
from . import genfun, laws, partitions, report, treesim, validate
from .genfun import SpecError, StepControlError, parse_spec
from .partitions import Partition, PartitionError, enumerate_chains, enumerate_partitions, maximal_paths
from .quadrature import DEFAULT, QuadratureError, Tolerance

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class Table:
    header: list[str]
    rows: list[list] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=dict)
    summary: str = ""
    status: int = EXIT_OK
    plot: object = None  # callable(path) drawing a figure of the rows


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


# ---------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gwgenealogy", description="Genealogies of continuous-time Galton-Watson trees.")
    sub = p.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--spec", required=True, help='offspring law, e.g. "bd:0.25,0.75", "geom:0.6", "pmf:0:0.5,2:0.5"')
        sp.add_argument("--out", default="-", help="CSV path, '-' for standard output")
        sp.add_argument("--plot-dir", default=None, help="also write a PNG figure into this directory")
        sp.add_argument("--abs-tol", type=float, default=None)
        sp.add_argument("--rel-tol", type=float, default=None)
        sp.add_argument("--max-sub", type=int, default=None)
        return sp

    sp = add("semigroup", "F_t(s) and its derivatives")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--s", type=_floats, default=[i / 10 for i in range(11)])
    sp.add_argument("--order", type=int, default=2)

    sp = add("pmf", "law of the population size N_T")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--jmax", type=int, default=20)
    sp.add_argument("--k", type=int, default=2)

    sp = add("fdd", "finite-dimensional laws of the partition process")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--mesh", type=_floats, required=True)
    sp.add_argument("--chain", default=None, help='e.g. "1,2|3;1|2|3"; all chains when omitted')
    sp.add_argument("--coalescent", action="store_true", help="chain describes the time-reversed process")

    sp = add("split", "split-time laws along maximal chains")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--path", default=None, help='maximal chain, e.g. "1|2,3;1|2|3"; all binary ones when omitted')
    sp.add_argument("--u", type=_floats, default=None, help="split times for the density")
    sp.add_argument("--windows", default=None, help='"a1:b1,a2:b2" for a window probability')

    sp = add("mixture", "density of the mixing variable")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--s", type=_floats, default=[i / 20 for i in range(21)])

    sp = add("transition", "conditional block-breaking kernel")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--s", type=float, required=True)
    sp.add_argument("--gamma", required=True)
    sp.add_argument("--block", required=True, help='block of gamma, e.g. "1,2"')
    sp.add_argument("--delta", default=None, help="partition of the block; all when omitted")
    sp.add_argument("--t1", type=float, required=True)
    sp.add_argument("--t2", type=float, required=True)

    sp = add("project", "law of a k-subsample of a (k+j)-sample")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--j", type=int, required=True)
    sp.add_argument("--mesh", type=_floats, required=True)
    sp.add_argument("--chain", required=True)

    sp = add("limit", "finite-T MRCA law against its large-T limit")
    sp.add_argument("--regime", choices=["super", "crit", "sub"], default=None)
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--T", type=_floats, required=True, help="comma-separated horizons")
    sp.add_argument("--probes", type=_floats, required=True)

    sp = add("simulate", "sample conditioned partition paths")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--replicates", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=None, help="default from GWGENEALOGY_WORKERS, else 1")
    sp.add_argument("--mesh", type=_floats, default=None, help="also report the chain at these times")
    sp.add_argument("--events", default=None, help="write event logs of unconditioned trees to this CSV")
    sp.add_argument("--floor", type=float, default=treesim.DEFAULT_FLOOR)
    sp.add_argument("--cap", type=int, default=treesim.DEFAULT_CAP)

    sp = add("validate", "Monte Carlo against exact laws")
    sp.add_argument("--law", choices=["fdd", "split"], required=True)
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--mesh", type=_floats, default=None)
    sp.add_argument("--bins", type=int, default=20)
    sp.add_argument("--index", type=int, default=0, help="which ordered split time to histogram")
    sp.add_argument("--replicates", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--tv-threshold", type=float, default=None)

    sp = add("identities", "Faa di Bruno expansion and beta inversion gaps")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--n", type=int, default=2, help="mesh length")
    sp.add_argument("--meshes", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jmax", type=int, default=60)
    return p


def _tolerance(args) -> Tolerance | None:
    if args.abs_tol is None and args.rel_tol is None and args.max_sub is None:
        return None
    return Tolerance(
        DEFAULT.abs if args.abs_tol is None else args.abs_tol,
        DEFAULT.rel if args.rel_tol is None else args.rel_tol,
        DEFAULT.max_subdivisions if args.max_sub is None else args.max_sub,
    )


def _base_meta(args, tol: Tolerance | None) -> dict[str, str]:
    q = tol or DEFAULT
    meta = {
        "command": args.command,
        "spec": str(args.spec),
        "package_version": _version(),
        "quad_abs_tol": repr(q.abs) + ("" if tol else " (scaled by the conditioning mass)"),
        "quad_rel_tol": repr(q.rel),
        "quad_max_subdivisions": str(q.max_subdivisions),
        "ode_rtol": repr(genfun.RTOL),
        "ode_atol": repr(genfun.ATOL),
        "ode_max_steps": str(genfun.MAX_STEPS),
    }
    if hasattr(args, "seed"):
        meta["seed"] = str(args.seed)
        meta["generator"] = treesim.GENERATOR
    return meta


# ---------------------------------------------------------------------------
# subcommands


def _law_row(law, spec, T, k, mesh, chain, res) -> list:
    return [law, str(spec), T, k, ",".join(f"{t:g}" for t in mesh), str(chain), res.value, res.abs_error, res.evaluations]


LAW_HEADER = ["law", "spec", "T", "k", "mesh", "chain", "value", "abs_err", "evaluations"]


def cmd_semigroup(spec, args, tol) -> Table:
    if args.order > genfun.MAX_ORDER:
        raise UsageError(f"order: jet order is capped at {genfun.MAX_ORDER}")
    c = genfun.semigroup_coeffs(spec, [args.T], s=args.s, order=args.order)[0]
    t = Table(["t", "s", "order", "derivative"])
    for s, row in zip(args.s, c):
        for r, x in enumerate(row):
            t.rows.append([args.T, s, r, math.factorial(r) * x])
    t.summary = f"F_{args.T:g} at {len(args.s)} points, orders 0..{args.order}"
    t.plot = lambda path: report.curve(
        path, args.s, {f"F^({r})": math.factorial(r) * c[:, r] for r in range(min(args.order, 2) + 1)},
        "s", "value", f"generating function at t={args.T:g}",
    )
    return t


def cmd_pmf(spec, args, tol) -> Table:
    p = genfun.population_pmf(spec, args.T, args.jmax)
    t = Table(["j", "probability"], [[j, float(x)] for j, x in enumerate(p)])
    tail = genfun.survival_tail(spec, args.T, args.k)
    t.meta["tail_at_k"] = f"P(N_T >= {args.k}) = {tail!r}"
    t.summary = f"P(N_{args.T:g} >= {args.k}) = {tail:.10g}"
    t.plot = lambda path: report.bars(path, [str(j) for j in range(len(p))], p, f"law of N at T={args.T:g}")
    return t


def cmd_fdd(spec, args, tol) -> Table:
    n = len(args.mesh)
    if args.chain:
        chains = [partitions.parse_chain(args.chain, args.k, args.coalescent)]
    else:
        chains = enumerate_chains(args.k, n, args.coalescent)
    table = laws.reversed_fdd_table if args.coalescent else laws.fdd_table
    res = table(spec, args.T, args.k, args.mesh, chains, tol)
    law = "rho_fdd" if args.coalescent else "fdd"
    t = Table(LAW_HEADER, [_law_row(law, spec, args.T, args.k, args.mesh, c, r) for c, r in zip(chains, res)])
    t.summary = f"{len(chains)} chain(s), total mass {sum(r.value for r in res):.10g}"
    t.plot = lambda path: report.bars(path, [str(c) for c in chains], [r.value for r in res], f"{law} T={args.T:g}")
    return t


def cmd_split(spec, args, tol) -> Table:
    paths = [partitions.parse_path(args.path, args.k)] if args.path else maximal_paths(args.k, binary_only=True)
    t = Table(["law", "spec", "T", "k", "path", "arguments", "value", "abs_err", "evaluations"])
    for path in paths:
        ok, _ = partitions.is_maximal(path)
        if not ok or path[0] != Partition.single_block(range(1, args.k + 1)):
            raise UsageError("maximal chain: each step must break exactly one block, starting from one block")
        label = ";".join(str(p) for p in path[1:])
        if args.u is not None:
            law, arg = "split_density", ",".join(f"{u:g}" for u in args.u)
            res = laws.split_density(spec, args.T, args.k, path, args.u, tol)
        elif args.windows:
            windows = [tuple(float(x) for x in w.split(":")) for w in args.windows.split(",")]
            law, arg = "split_window", args.windows
            res = laws.split_window_probability(spec, args.T, args.k, path, windows, tol)
        else:
            law, arg = "split_simplex", "all"
            res = laws.split_simplex_probability(spec, args.T, args.k, path, tol)
        t.rows.append([law, str(spec), args.T, args.k, label, arg, res.value, res.abs_error, res.evaluations])
    t.summary = f"{len(paths)} chain(s), total {sum(r[6] for r in t.rows):.10g}"
    return t


def cmd_mixture(spec, args, tol) -> Table:
    d = laws.mixture_density(spec, args.T, args.k, args.s)
    t = Table(["s", "density"], [[s, float(x)] for s, x in zip(args.s, d)])
    t.summary = f"mixture density at {len(args.s)} points"
    t.plot = lambda path: report.curve(path, args.s, {"density": d}, "s", "density", f"mixing density k={args.k}")
    return t


def cmd_transition(spec, args, tol) -> Table:
    gamma = partitions.parse_partition(args.gamma, args.k)
    block = tuple(sorted(int(x) for x in args.block.split(",")))
    if args.delta:
        deltas = [Partition.of(*[[int(x) for x in b.split(",")] for b in args.delta.split("|")])]
    else:
        deltas = [Partition.of(*[[block[i - 1] for i in B] for B in d]) for d in enumerate_partitions(len(block))]
    t = Table(["gamma", "block", "delta", "t1", "t2", "s", "probability"])
    for d in deltas:
        v = laws.markov_transition(spec, args.T, args.s, gamma, block, d, args.t1, args.t2)
        t.rows.append([str(gamma), ",".join(map(str, block)), str(d), args.t1, args.t2, args.s, v])
    t.summary = f"{len(deltas)} outcome(s), row sum {sum(r[-1] for r in t.rows):.12g}"
    return t


def cmd_project(spec, args, tol) -> Table:
    chain = partitions.parse_chain(args.chain, args.k)
    res = laws.projection_fdd(spec, args.T, args.k, args.j, args.mesh, chain, tol)
    t = Table(LAW_HEADER + ["j"], [_law_row("projection", spec, args.T, args.k, args.mesh, chain, res) + [args.j]])
    t.summary = f"projected law {res.value:.10g}"
    return t


def cmd_limit(spec, args, tol) -> Table:
    regime = args.regime or spec.regime
    table = validate.validate_limit(regime, spec, args.k, args.T, args.probes)
    t = Table(["T", "probe", "finite", "limit", "gap"], [list(r) for r in table.rows])
    t.meta["regime"] = regime
    gaps = ", ".join(f"T={T:g}: {table.max_gap(T):.3g}" for T in table.horizons)
    t.summary = f"{regime} max gaps {gaps}; shrinking={table.shrinking}"
    t.status = EXIT_OK if table.shrinking else EXIT_CHECK
    t.plot = lambda path: report.convergence(path, table.rows, f"{regime} limit, k={args.k}")
    return t


def cmd_simulate(spec, args, tol) -> Table:
    t = Table(["replicate", "jumps", "path"] + (["chain"] if args.mesh else []))
    if args.events:
        trees = (treesim.simulate_tree(spec, args.T, treesim.stream(args.seed, r), args.cap) for r in range(args.replicates))
        with open(args.events, "w", newline="") as fh:
            rows = treesim.write_event_log(trees, fh)
        t.meta["events"] = f"{args.events} ({rows} rows)"
    ens = treesim.conditioned_ensemble(
        spec, args.T, args.k, args.replicates, args.seed, workers=args.workers, floor=args.floor, cap=args.cap
    )
    for i, p in enumerate(ens):
        row = [i, len(p.jumps), ";".join(f"{tau!r}:{v}" for tau, v in p.jumps)]
        if args.mesh:
            row.append(str(p.chain_at(args.mesh)))
        t.rows.append(row)
    t.meta.update(
        {"acceptance_rate": repr(ens.acceptance_rate), "attempts": str(ens.attempts),
         "acceptance_floor": repr(args.floor), "tree_cap": str(args.cap)}
    )
    t.summary = f"{len(ens)} paths accepted from {ens.attempts} attempts"
    if args.mesh and len(ens):
        freq = treesim.empirical_fdd(ens, args.mesh)
        items = sorted(freq.items(), key=lambda kv: str(kv[0]))
        t.plot = lambda path: report.bars(path, [str(c) for c, _ in items], [v for _, v in items], "empirical chain law")
    return t


def cmd_validate(spec, args, tol) -> Table:
    if args.law == "fdd":
        if not args.mesh:
            raise UsageError("mesh: validate --law fdd needs --mesh")
        rep = validate.validate_fdd(spec, args.T, args.k, args.mesh, args.replicates, args.seed, args.tv_threshold, args.workers)
    else:
        rep = validate.validate_split_times(
            spec, args.T, args.k, args.bins, args.replicates, args.seed, args.index, args.tv_threshold, args.workers
        )
    t = Table(["kind", "label", "expected", "observed"], rep.rows())
    t.meta.update(rep.metadata())
    t.meta["tv_threshold"] = repr(rep.tv_threshold)
    t.summary = (
        f"{rep.law}: tv={rep.tv:.4g} (limit {rep.tv_threshold:.4g}), chi2={rep.chi2:.4g} on {rep.dof} dof, "
        f"p={rep.p_value:.4g}, {'PASS' if rep.passed else 'FAIL'}, {rep.runtime:.1f}s"
    )
    t.status = EXIT_OK if rep.passed else EXIT_CHECK
    labels = [o[0] for o in rep.outcomes]
    t.plot = lambda path: report.expected_vs_observed(
        path, labels, [o[1] for o in rep.outcomes], [o[2] for o in rep.outcomes], rep.law
    )
    return t


def cmd_identities(spec, args, tol) -> Table:
    rng = np.random.default_rng(args.seed)
    t = Table(["identity", "arguments", "lhs", "rhs", "gap"])
    worst_fdb = 0.0
    for _ in range(args.meshes):
        mesh = sorted(rng.uniform(0.05, 0.95, args.n) * args.T)
        s = float(rng.uniform(0.05, 0.95))
        lhs, rhs, gap = laws.faa_di_bruno_check(spec, args.T, args.k, mesh, s)
        worst_fdb = max(worst_fdb, gap)
        t.rows.append(["faa_di_bruno", f"mesh={','.join(f'{x:.6g}' for x in mesh)};s={s:.6g}", lhs, rhs, gap])
    pmf = genfun.population_pmf(spec, args.T, args.jmax)
    integral, direct, bgap = laws.beta_inversion_check(args.k, pmf)
    t.rows.append(["beta_inversion", f"N_T pmf truncated at {args.jmax}", integral, direct, bgap])
    ok = worst_fdb <= 1e-8 and bgap <= 1e-6
    t.meta.update({"fdb_gap_limit": "1e-08", "beta_gap_limit": "1e-06"})
    t.summary = f"worst Faa di Bruno gap {worst_fdb:.3g}, beta inversion gap {bgap:.3g}, {'PASS' if ok else 'FAIL'}"
    t.status = EXIT_OK if ok else EXIT_CHECK
    return t


COMMANDS = {
    "semigroup": cmd_semigroup,
    "pmf": cmd_pmf,
    "fdd": cmd_fdd,
    "split": cmd_split,
    "mixture": cmd_mixture,
    "transition": cmd_transition,
    "project": cmd_project,
    "limit": cmd_limit,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "identities": cmd_identities,
}


# ---------------------------------------------------------------------------
# driver


def write_table(t: Table, fh) -> None:
    for key, val in t.meta.items():
        fh.write(f"# {key}={val}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(t.header)
    w.writerows([[_fmt(x) for x in row] for row in t.rows])


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = _parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command is None:
        parser.print_usage(stderr)
        return EXIT_USAGE
    try:
        spec = parse_spec(args.spec)
        tol = _tolerance(args)
        t = COMMANDS[args.command](spec, args, tol)
    except (UsageError, SpecError, PartitionError, asy.RegimeError, ValueError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (
        StepControlError,
        QuadratureError,
        asy.StabilityError,
        laws.DegenerateKernel,
        treesim.TreeTooLarge,
        treesim.AcceptanceFloorError,
        OSError,
        RuntimeError,
    ) as exc:
        stderr.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC
    t.meta = {**_base_meta(args, tol), **t.meta}
    with (nullcontext(stdout) if args.out == "-" else open(args.out, "w", newline="")) as fh:
        write_table(t, fh)
    if args.plot_dir and t.plot is not None:
        target = Path(args.plot_dir) / f"{args.command}.png"
        t.plot(target)
        t.summary += f"; figure {target}"
    stderr.write(t.summary + "\n")
    return t.status


def main() -> None:
    sys.exit(run())
