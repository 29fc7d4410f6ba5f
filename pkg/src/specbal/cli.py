"""Command-line front end: ``specbal balance | verify | sharpness | simulate``.

Exit codes: 0 success, 1 input or configuration error, 2 iteration limit,
3 infeasible problem, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .balancer import BalanceProblem, BalancerConfig, Status, balance
from .errors import ConfigError, DegenerateError, InfeasibleError, InputError, InternalError
from .io import (
    WALK_COLUMNS,
    load_A,
    load_matrices,
    manifest,
    matrices_to_json,
    write_csv,
    write_json,
)
from .sharpness import row_witness, sharp_family, witness_violation
from .spectral_core import balance_ratios

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_ITERATION_LIMIT = 2
EXIT_INFEASIBLE = 3
EXIT_VERIFY = 4


def _rng(seed, *key):
    """Counter-based stream derived from the single ``--seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def _echo(args):
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _figure_path(out, suffix):
    return str(Path(out).with_suffix("")) + suffix


def cmd_balance(args):
    mset = load_matrices(args.input)
    problem = BalanceProblem(mset, args.k)
    config = BalancerConfig(
        R=args.R if args.R == "auto" else float(args.R),
        target_margin=args.tol,
        max_iterations=args.max_iter,
        seed=args.seed,
    )
    result = balance(problem, config)
    payload = result.to_json()
    payload["manifest"] = manifest("balance", _echo(args), args.seed, [args.input])
    if args.trace:
        rows = [s._asdict() for s in result.step_log]
        write_csv(args.trace, rows, ("iteration", "kind", "epsilon", "f_before", "f_after", "R"))
    if args.out:
        write_json(args.out, payload)
    else:
        print(json.dumps(payload["ratios"]))
    if args.plot:
        from .report import plot_descent

        plot_descent(result, _figure_path(args.out or args.input, "_descent.png"))
    print(f"status {result.status.value}: score {result.final_score:.12g} (1/k = {1 / args.k:.12g}), "
          f"{result.iterations} iterations", file=sys.stderr)
    return EXIT_OK if result.status is Status.CONVERGED else EXIT_ITERATION_LIMIT


def cmd_verify(args):
    mset = load_matrices(args.input)
    A = load_A(args.A)
    if A.shape[0] != mset.dim:
        raise InputError(f"A is {A.shape[0]}x{A.shape[1]} but the matrices are {mset.dim}x{mset.dim}")
    try:
        ratios = balance_ratios(A, mset)
    except DegenerateError as exc:
        raise InputError(f"A: {exc}") from None
    bound = 1.0 / args.k
    for i, r in enumerate(ratios):
        print(f"{i}\t{r:.15g}\t{'ok' if r < bound else 'VIOLATES'}")
    bad = np.nonzero(ratios >= bound)[0]
    if len(bad):
        print(f"witness: matrix {bad[0]} has ratio {ratios[bad[0]]:.15g} >= 1/k = {bound:.15g}")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_sharpness(args):
    family = sharp_family(args.d, args.k, args.epsilon)
    if args.out:
        payload = matrices_to_json(family.matrices)
        payload["k"] = args.k
        payload["epsilon"] = family.epsilon
        payload["manifest"] = manifest("sharpness", _echo(args), args.seed)
        write_json(args.out, payload)
    rng = _rng(args.seed, 0)
    failures = 0
    print("trial\twitness\tratio\trow_owner")
    for t in range(args.trials):
        A = rng.standard_normal((args.d, args.d))
        try:
            i0, ratio = witness_violation(A, family)
        except DegenerateError:
            continue
        except InternalError as exc:
            failures += 1
            print(f"{t}\tNONE\t-\t-\t{exc}")
            continue
        if t < args.show:
            print(f"{t}\t{i0}\t{ratio:.12g}\t{row_witness(A, family)}")
    print(f"{args.trials - failures}/{args.trials} trials found a violator "
          f"(d={args.d}, k={args.k}, epsilon={family.epsilon:.6g})")
    return EXIT_OK if failures == 0 else EXIT_VERIFY


def _parse_checkpoints(text):
    try:
        return tuple(int(round(float(x))) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad checkpoint list {text!r}") from None


def cmd_simulate(args):
    from .walk import Gaussian, WalkConfig, default_return_radius, fit_decay, make_strategy, simulate_walks

    mset = load_matrices(args.input)
    inputs = [args.input]
    if args.balancer == "auto":
        res = balance(BalanceProblem(mset, args.k))
        if not res.converged:
            raise InfeasibleError(f"balancing stopped with status {res.status.value}")
        P = res.A.T
    elif args.balancer == "none":
        P = None
    else:
        P = load_A(args.balancer).T
        inputs.append(args.balancer)
        if P.shape[0] != mset.dim:
            raise InputError(f"A is {P.shape[0]}x{P.shape[0]} but the matrices are {mset.dim}x{mset.dim}")
    checkpoints = _parse_checkpoints(args.checkpoints)
    if not checkpoints:
        raise ConfigError("at least one checkpoint is required")
    horizon = args.horizon or 3 * max(checkpoints)
    observed = [M if P is None else P @ M @ P.T for M in mset]
    radius = default_return_radius(observed) if args.radius in (None, "auto") else float(args.radius)
    rows, slopes, decays = [], {}, []
    for name in args.strategy.split(","):
        cfg = WalkConfig(
            distributions=[Gaussian(M) for M in mset],
            strategy=make_strategy(name),
            preconditioner=P,
            horizon=horizon,
            return_radius=radius,
            checkpoints=checkpoints,
            n_walks=args.walks,
            seed=args.seed,
        )
        stats = simulate_walks(cfg, n_jobs=args.jobs)
        slope, intercept, n_fit = fit_decay(stats.checkpoints, stats.p_hat)
        rows += stats.rows()
        slopes[stats.strategy] = {"slope": slope, "intercept": intercept, "points_fitted": n_fit}
        decays.append((stats, slope, intercept, n_fit))
        print(f"{stats.strategy}: slope {slope:.4f} over {n_fit} checkpoints", file=sys.stderr)
    write_csv(args.csv, rows, WALK_COLUMNS)
    summary = {
        "radius": radius,
        "horizon": horizon,
        "strategies": slopes,
        "manifest": manifest("simulate", _echo(args), args.seed, inputs),
    }
    if args.k is not None:
        summary["predicted_slope"] = -(args.k - 2) / 2
    write_json(args.json or _figure_path(args.csv, "_summary.json"), summary)
    if args.plot:
        from .report import plot_decay
        from .walk import StrategyDecay, TransienceReport

        rep = TransienceReport(P, args.k, radius, None,
                               [StrategyDecay(s.strategy, s, sl, ic, n) for s, sl, ic, n in decays])
        plot_decay(rep, _figure_path(args.csv, "_decay.png"))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; argparse would exit 2, the iteration-limit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="specbal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("balance", help="find A with every ratio below 1/k")
    b.add_argument("--input", required=True, help="matrix JSON file")
    b.add_argument("--k", type=int, required=True, help="target: every ratio below 1/k")
    b.add_argument("--R", default="auto", help="ratio bound of the search domain, or 'auto'")
    b.add_argument("--tol", type=float, default=1e-6, help="required margin below 1/k")
    b.add_argument("--max-iter", type=int, default=2000, help="descent steps per value of R")
    b.add_argument("--out", help="result JSON (ratios printed to stdout if omitted)")
    b.add_argument("--trace", help="CSV file for the per-step log")
    b.add_argument("--seed", type=int, default=0, help="recorded in the manifest; the descent is deterministic")
    b.add_argument("--plot", action="store_true", help="also write a descent figure (PNG)")
    b.set_defaults(func=cmd_balance)

    v = sub.add_parser("verify", help="check that A balances the matrices")
    v.add_argument("--input", required=True, help="matrix JSON file")
    v.add_argument("--A", required=True, help="balance result JSON or a bare JSON matrix")
    v.add_argument("--k", type=int, required=True, help="pass iff every ratio is below 1/k")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sharpness", help="emit an unbalanceable family and test random A against it")
    s.add_argument("--d", type=int, required=True, help="dimension, a multiple of k-1")
    s.add_argument("--k", type=int, required=True, help="balancing level")
    s.add_argument("--epsilon", type=float, default=None, help="off-block entry, default 1/(2d)")
    s.add_argument("--trials", type=int, default=1000, help="random matrices A to test")
    s.add_argument("--seed", type=int, default=0, help="seed for the random A")
    s.add_argument("--out", help="write the family as matrix JSON")
    s.add_argument("--show", type=int, default=10, help="witness rows to print")
    s.set_defaults(func=cmd_sharpness)

    w = sub.add_parser("simulate", help="adaptive random walks with Gaussian steps N(0, M_i)")
    w.add_argument("--input", required=True, help="matrix JSON file")
    w.add_argument("--balancer", default="auto", help="'auto' (run balance), 'none', or an A file")
    w.add_argument("--k", type=int, default=None, help="balancing level (needed for --balancer auto)")
    w.add_argument("--strategy", default="max_radial_variance",
                   help="comma list of fixed:<i>, round_robin, uniform_random, "
                        "max_radial_variance, min_radial_variance")
    w.add_argument("--radius", default="auto", help="return radius, 'auto' = 6 sqrt(max trace)")
    w.add_argument("--checkpoints", default="100,316,1000,3162,10000", help="comma list of times T")
    w.add_argument("--horizon", type=int, default=None, help="steps per walk, default 3 x last checkpoint")
    w.add_argument("--walks", type=int, default=10_000, help="number of walks per strategy")
    w.add_argument("--seed", type=int, default=0, help="root seed of the per-walk streams")
    w.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    w.add_argument("--csv", required=True, help="output table")
    w.add_argument("--json", help="slope summary, default <csv>_summary.json")
    w.add_argument("--plot", action="store_true", help="also write a decay figure (PNG)")
    w.set_defaults(func=cmd_simulate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "simulate" and args.balancer == "auto" and args.k is None:
        print("error: --balancer auto needs --k", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, ConfigError, DegenerateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
