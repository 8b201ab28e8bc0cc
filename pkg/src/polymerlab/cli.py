"""Command-line front end.

Five subcommands: ``polymer`` (exact log partition function of one
sampled field), ``elpp`` (chain solver on a CSV point set or on the top
weights of a sampled field), ``ppp`` (truncated point-process samples
and their limit functionals), ``regime`` (schedule classification as
JSON), and ``experiment run`` (campaign from a config file).  All of
them print a single JSON record to stdout except ``experiment``, which
writes CSV files and a manifest to a directory.

Exit codes: 0 on success, 1 when an experiment invariant failed, 2 on
bad arguments or bad input files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict
from typing import Optional, Sequence

import numpy as np

from .continuum import (
    DEFAULT_TOP,
    chain_value,
    critical_coupling,
    heat_kernel_sum,
    lipschitz_chain_value,
    sample_ppp,
    single_point_max,
)
from .elpp import (
    ANY,
    ENTROPY_LIPSCHITZ,
    ENTROPY_QUADRATIC,
    at_least,
    exactly,
    solve,
)
from .environment import (
    LAW_CONSTANT,
    LAW_LOGPOWER,
    TailParams,
    ordered_statistics,
    quantile,
    sample_field,
)
from .experiments import run_from_file
from .polymer import (
    CENTER_MEAN,
    CENTER_NONE,
    CENTER_TRUNCATED,
    PathConstraint,
    WeightFilter,
    centering_value,
    filter_above,
    filter_between,
    filter_atmost_one,
    log_partition,
)
from .regimes import PowerLawSchedule, classify, fluctuation_scale


def _tail_from_args(args) -> TailParams:
    return TailParams(args.alpha, law=args.law, c=args.c, b=args.b)


def _add_law_flags(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--law", choices=(LAW_CONSTANT, LAW_LOGPOWER), default=LAW_CONSTANT,
        help="weight tail family (default constant L = c)",
    )
    parser.add_argument("--c", type=float, default=1.0, help="constant L value")
    parser.add_argument(
        "--b", type=float, default=1.0, help="logpower exponent of L"
    )


def _parse_filter(text: str) -> WeightFilter:
    """Filter spec: all | atmost1 | above:T | between:LO:HI."""
    head, _, rest = text.partition(":")
    if head == "all" and not rest:
        return WeightFilter()
    if head == "atmost1" and not rest:
        return filter_atmost_one()
    if head == "above" and rest:
        return filter_above(float(rest))
    if head == "between" and rest:
        lo, _, hi = rest.partition(":")
        if hi:
            return filter_between(float(lo), float(hi))
    raise ValueError(f"bad filter spec {text!r}")


def _parse_cardinality(text: str):
    """Cardinality spec: any | exactly:K | atleast:R."""
    head, _, rest = text.partition(":")
    if head == "any" and not rest:
        return ANY
    if head == "exactly" and rest:
        return exactly(int(rest))
    if head == "atleast" and rest:
        return at_least(int(rest))
    raise ValueError(f"bad cardinality spec {text!r}")


def _emit(record: dict) -> int:
    print(json.dumps(record, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# polymer


def _cmd_polymer(args) -> int:
    tail = _tail_from_args(args)
    if args.beta is not None:
        beta = args.beta
    else:
        beta = args.beta_hat * float(args.n) ** (-args.gamma)
    window = tuple(args.window) if args.window else None
    constraint = PathConstraint(
        band=args.band,
        band_window=window,
        weight_filter=_parse_filter(args.filter),
        centering=args.centering,
    )

    t0 = time.perf_counter()
    field = sample_field(args.n, args.h, tail, args.seed)
    t1 = time.perf_counter()
    logz = log_partition(field, beta, constraint)
    t2 = time.perf_counter()

    scale = fluctuation_scale(args.n, beta, tail)
    return _emit({
        "logZ": float(logz),
        "normalizers": {
            "beta": beta,
            "h_n": scale.h,
            "h_n_clamped": scale.clamped,
            "weight_scale": quantile(tail, args.n * scale.h),
            "centering_per_step": centering_value(tail, beta, args.centering),
        },
        "timings": {"sample_s": t1 - t0, "transfer_s": t2 - t1},
        "params": {
            "n": args.n, "h": args.h, "alpha": args.alpha, "law": args.law,
            "band": args.band, "window": window, "filter": args.filter,
            "centering": args.centering, "seed": args.seed,
        },
    })


# ---------------------------------------------------------------------------
# elpp


def _read_points_csv(path: str) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row[:3]])
            except ValueError:
                if lineno == 0:
                    continue  # header row
                raise ValueError(f"{path}:{lineno + 1}: non-numeric row")
            if len(row) < 3:
                raise ValueError(f"{path}:{lineno + 1}: need t,x,w columns")
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def _cmd_elpp(args) -> int:
    if (args.points_file is None) == (args.from_field is None):
        raise ValueError("give a points file or --from-field, not both")
    if args.points_file is not None:
        points = _read_points_csv(args.points_file)
        kappa = args.kappa if args.kappa is not None else 0.0
        source = {"file": args.points_file}
    else:
        spec = args.from_field.split(",")
        if len(spec) != 5:
            raise ValueError("--from-field needs n,h,alpha,seed,ell")
        n, h, alpha, seed, ell = (
            int(spec[0]), int(spec[1]), float(spec[2]), int(spec[3]),
            int(spec[4]),
        )
        field = sample_field(n, h, TailParams(alpha), seed)
        stats = ordered_statistics(field, ell, reachable_only=True)
        points = np.column_stack(
            [stats.rows.astype(float), stats.cols.astype(float), stats.weights]
        )
        # site-marking price in lattice units unless overridden
        kappa = args.kappa if args.kappa is not None else 0.5 * math.log(n)
        source = {"n": n, "h": h, "alpha": alpha, "seed": seed, "ell": ell}

    solution = solve(
        points, args.beta, kappa=kappa, entropy_kind=args.entropy,
        cardinality=_parse_cardinality(args.cardinality),
    )
    return _emit({
        "value": solution.value,
        "chain": [list(p) for p in solution.chain],
        "params": {
            "beta": args.beta, "kappa": kappa, "entropy": args.entropy,
            "cardinality": args.cardinality, "points": int(len(points)),
            "source": source,
        },
    })


# ---------------------------------------------------------------------------
# ppp


def _cmd_ppp(args) -> int:
    if args.eps is not None and args.top is not None:
        raise ValueError("give at most one of --eps and --top")

    if args.op == "beta_c":
        if args.eps is not None:
            raise ValueError("beta_c estimates run in top mode")
        flavor = "tilde" if args.alpha > 0.5 else "hat"
        top = args.top if args.top is not None else DEFAULT_TOP
        est = critical_coupling(
            args.alpha, flavor=flavor, replicas=args.replicas, top=top,
            q=args.q, seed=args.seed,
        )
        return _emit({
            "op": "beta_c",
            "value": est.median,
            "ci_low": est.ci_low,
            "ci_high": est.ci_high,
            "relative_shift": est.relative_shift,
            "failures": est.failures,
            "truncation": {"mode": "top", "top": est.top,
                           "doubled_top": 2 * est.top},
            "params": {"alpha": est.alpha, "q": est.q, "flavor": est.flavor,
                       "replicas": args.replicas, "seed": args.seed},
        })

    # default truncation: 256 heaviest points; W0 defaults to the wide
    # box its kernel tail needs
    q = args.q if args.q is not None else (8.0 if args.op == "W0" else 1.0)
    eps, top = args.eps, args.top
    if eps is None and top is None:
        top = DEFAULT_TOP
    points = sample_ppp(args.alpha, q, eps=eps, top=top, seed=args.seed)

    if args.op == "T":
        value = chain_value(points, args.nu)
    elif args.op == "tildeT":
        if args.beta is None:
            raise ValueError("tildeT needs --beta")
        value = chain_value(points, args.nu, beta=args.beta)
    elif args.op == "hatT":
        if args.beta is None:
            raise ValueError("hatT needs --beta")
        value = lipschitz_chain_value(points, args.beta)
    elif args.op == "W":
        if args.beta is None:
            raise ValueError("W needs --beta")
        value = single_point_max(points, args.beta).value
    else:  # W0
        value = heat_kernel_sum(points)

    return _emit({
        "op": args.op,
        "value": float(value),
        "truncation": {
            "mode": "eps" if eps is not None else "top",
            "eps": eps,
            "top": top,
            "points": int(len(points)),
        },
        "params": {"alpha": args.alpha, "q": q, "nu": args.nu,
                   "beta": args.beta, "seed": args.seed},
    })


# ---------------------------------------------------------------------------
# regime


def _cmd_regime(args) -> int:
    report = classify(
        args.alpha,
        PowerLawSchedule(args.gamma, args.beta_hat),
        args.n,
        tail=_tail_from_args(args),
        seed=args.seed,
    )
    record = asdict(report)
    record["probes"] = list(record["probes"])
    return _emit(record)


# ---------------------------------------------------------------------------
# experiment


def _cmd_experiment(args) -> int:
    return run_from_file(args.config, out_dir=args.out, threads=args.threads)


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polymerlab",
        description="heavy-tail polymer solvers and experiment campaigns",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("polymer", help="exact log partition of one field")
    p.add_argument("--n", type=int, required=True, help="number of steps")
    p.add_argument("--h", type=int, required=True, help="field half-width")
    p.add_argument("--alpha", type=float, required=True, help="tail exponent")
    coupling = p.add_mutually_exclusive_group(required=True)
    coupling.add_argument("--beta", type=float, help="coupling, fixed")
    coupling.add_argument(
        "--gamma", type=float, help="coupling exponent: beta_hat * n^(-gamma)"
    )
    p.add_argument("--beta-hat", type=float, default=1.0)
    p.add_argument("--band", type=int, default=None, help="max |S_i| <= band")
    p.add_argument(
        "--window", type=int, nargs=2, metavar=("H1", "H2"), default=None,
        help="max |S_i| in [H1, H2)",
    )
    p.add_argument(
        "--filter", default="all",
        help="energy filter: all | atmost1 | above:T | between:LO:HI",
    )
    p.add_argument(
        "--centering",
        choices=(CENTER_NONE, CENTER_MEAN, CENTER_TRUNCATED),
        default=CENTER_NONE,
    )
    p.add_argument("--seed", type=int, default=0)
    _add_law_flags(p)
    p.set_defaults(handler=_cmd_polymer)

    p = sub.add_parser("elpp", help="chain solver on a point set")
    p.add_argument(
        "points_file", nargs="?", default=None,
        help="CSV of t,x,w rows (header row allowed)",
    )
    p.add_argument(
        "--from-field", default=None, metavar="N,H,ALPHA,SEED,ELL",
        help="solve on the ELL heaviest reachable sites of a sampled field",
    )
    p.add_argument("--beta", type=float, required=True)
    p.add_argument(
        "--kappa", type=float, default=None,
        help="per-point price (default 0 for files, log(n)/2 for fields)",
    )
    p.add_argument(
        "--cardinality", default="any",
        help="chain size: any | exactly:K | atleast:R",
    )
    p.add_argument(
        "--entropy", choices=(ENTROPY_QUADRATIC, ENTROPY_LIPSCHITZ),
        default=ENTROPY_QUADRATIC,
    )
    p.set_defaults(handler=_cmd_elpp)

    p = sub.add_parser("ppp", help="point-process sample functionals")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument(
        "--q", type=float, default=None,
        help="box half-width (default 1; 8 for W0; flavor default for beta_c)",
    )
    p.add_argument("--eps", type=float, default=None, help="weight floor")
    p.add_argument(
        "--top", type=int, default=None,
        help=f"keep this many heaviest points (default {DEFAULT_TOP})",
    )
    p.add_argument("--seed", type=int, default=None)
    p.add_argument(
        "--op", required=True,
        choices=("T", "tildeT", "hatT", "W", "W0", "beta_c"),
    )
    p.add_argument("--nu", type=float, default=1.0, help="weight prefactor")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument(
        "--replicas", type=int, default=100, help="beta_c sample size"
    )
    p.set_defaults(handler=_cmd_ppp)

    p = sub.add_parser("regime", help="classify a coupling schedule")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--beta-hat", type=float, default=1.0)
    p.add_argument(
        "--n", type=int, default=1_000_000, help="probe size for the scale"
    )
    p.add_argument("--seed", type=int, default=None)
    _add_law_flags(p)
    p.set_defaults(handler=_cmd_regime)

    p = sub.add_parser("experiment", help="run a campaign config")
    exp_sub = p.add_subparsers(dest="experiment_command", required=True)
    run_p = exp_sub.add_parser("run", help="run one config file")
    run_p.add_argument("config", help="JSON config file")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--threads", type=int, default=None)
    run_p.set_defaults(handler=_cmd_experiment)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
