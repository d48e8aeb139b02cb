"""Command line entry point: ``throttle-lift <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 input/data error, 4 statistical
degeneracy (no compliers, zero first stage, too many failed replicates).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import ingest
from .errors import DataError, DegeneracyError
from .estimators import estimate_late, naive_iv_wald, ols_estimate
from .inference import analytic_variance, bootstrap_inference, normal_ci
from .montecarlo import emit_report, run_replications, write_report
from .policy import ConstantPolicy, LadderPolicy, ScheduledPolicy
from .records import atomic_write_text, fmt_num, read_records, rows_to_csv, write_records
from .sim import CampaignConfig, run_campaign, write_run

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 2, 3, 4
THREADS_ENV = "THROTTLE_LIFT_THREADS"


def _bin_width(text: str):
    if text == "exact":
        return None
    try:
        width = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number or 'exact', got {text!r}") from None
    if not width > 0:
        raise argparse.ArgumentTypeError("bin width must be positive")
    return width


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _alpha(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1]")
    return value


def _load_config(path) -> CampaignConfig:
    if path is None:
        return CampaignConfig()
    return CampaignConfig.from_json(path)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    run = run_campaign(config)
    write_run(run, args.out)
    print(f"simulated {len(run.records)} auctions, spend {run.records.e.sum():.2f}, "
          f"{int(run.records.z.sum())} participations -> {args.out}")
    return EXIT_OK


def _strata_rows(result):
    for s in result.strata:
        yield ["late_stratum", "", "", fmt_num(s.p), fmt_num(s.n_p), fmt_num(s.itt_y), fmt_num(s.itt_d),
               fmt_num(s.n_co_hat), fmt_num(s.tau_p), fmt_num(result.weights[s.p])]


def cmd_estimate(args) -> int:
    rec = read_records(args.records)
    methods = ["late", "ols", "iv"] if args.method == "all" else [args.method]
    n = float(rec.weight.sum()) if args.weighted else float(len(rec))
    rows, result = [], None
    for m in methods:
        if m == "late":
            result = estimate_late(rec, bin_width=args.bin_width, weighted=args.weighted)
            value = result.tau_hat
        elif m == "ols":
            value = ols_estimate(rec, weighted=args.weighted)
        else:
            value = naive_iv_wald(rec, weighted=args.weighted)
        rows.append([m, fmt_num(value), fmt_num(n)] + [""] * 7)
        print(f"{m}: estimate={value:.6f} n={fmt_num(n)}")
    if result is not None:
        rows += list(_strata_rows(result))
    header = ["method", "estimate", "n", "p", "n_p", "itt_y", "itt_d", "n_co_hat", "tau_p", "w_p"]
    if args.out:
        atomic_write_text(args.out, rows_to_csv(header, rows))
    return EXIT_OK


def _policy(args, rec):
    cfg_data = json.loads(Path(args.policy_config).read_text()) if args.policy_config else None
    if args.policy == "ladder":
        return LadderPolicy.from_config(CampaignConfig.from_dict(cfg_data) if cfg_data else CampaignConfig())
    if cfg_data and "probability" in cfg_data:
        return ConstantPolicy(float(cfg_data["probability"]))
    # replay the observed per-interval path
    n_int = int(rec.interval.max()) + 1
    path = np.full(n_int, np.nan)
    path[rec.interval] = rec.p
    last = path[~np.isnan(path)][0]
    for t in range(n_int):
        last = path[t] = last if np.isnan(path[t]) else path[t]
    return ScheduledPolicy(tuple(float(x) for x in path))


def cmd_bootstrap(args) -> int:
    rec = read_records(args.records)
    policy = _policy(args, rec)
    res = bootstrap_inference(rec, policy, B=args.B, alpha=args.alpha, seed=args.seed,
                              empty_arm=args.empty_arm, bin_width=args.bin_width,
                              weighted=args.weighted, n_jobs=_threads(args))
    lo, hi, _ = res.ci_percentile
    print(f"bootstrap: tau_hat={res.tau_hat:.6f} se={res.se:.6f} ci=[{lo:.6f}, {hi:.6f}] "
          f"B={res.b_count} failed={res.failed_replicates}")
    if args.out:
        atomic_write_text(args.out, rows_to_csv(
            ["method", "tau_hat", "se", "ci_low", "ci_high", "B", "failed"],
            [["bootstrap", fmt_num(res.tau_hat), fmt_num(res.se), fmt_num(lo), fmt_num(hi),
              str(res.b_count), str(res.failed_replicates)]]))
    return EXIT_OK


def cmd_variance(args) -> int:
    rec = read_records(args.records)
    result = estimate_late(rec, bin_width=args.bin_width, weighted=args.weighted)
    av = analytic_variance(result.strata, result.tau_hat, result.n_total)
    lo, hi = normal_ci(result.tau_hat, av.variance, args.alpha)
    print(f"analytic: tau_hat={result.tau_hat:.6f} se={av.se:.6f} ci=[{lo:.6f}, {hi:.6f}]")
    if args.out:
        atomic_write_text(args.out, rows_to_csv(
            ["method", "tau_hat", "se", "ci_low", "ci_high"],
            [["analytic", fmt_num(result.tau_hat), fmt_num(av.se), fmt_num(lo), fmt_num(hi)]]))
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    config = _load_config(args.config)
    R = 1000 if args.full_scale and args.R is None else (args.R or 200)
    report = run_replications(config, R=R, with_bootstrap=args.bootstrap, B=args.B,
                              master_seed=args.seed, alpha=args.alpha, n_jobs=_threads(args),
                              empty_arm=args.empty_arm)
    if args.out_dir:
        write_report(report, args.out_dir)
    sys.stdout.write(emit_report(report, "markdown"))
    return EXIT_OK


def cmd_ingest(args) -> int:
    rec = ingest(args.log, strict=args.strict)
    if len(rec) == 0:
        raise DataError("no matched auctions in log")
    write_records(rec, args.emit_records, with_weight=True)
    print(f"ingested {len(rec)} records ({int(rec.z.sum())} participated, "
          f"{int((rec.z == 0).sum())} matched controls) -> {args.emit_records}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker processes (default ${THREADS_ENV} or all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="throttle-lift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate one throttled campaign")
    p.add_argument("--config", help="JSON campaign config (defaults if omitted)")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    def record_input(q):
        q.add_argument("--records", required=True)
        q.add_argument("--bin-width", type=_bin_width, default=None, metavar="WIDTH|exact")
        q.add_argument("--weighted", action="store_true")
        q.add_argument("--out")

    p = sub.add_parser("estimate", parents=[common], help="stratified LATE and baselines")
    record_input(p)
    p.add_argument("--method", choices=["late", "ols", "iv", "all"], default="all")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bootstrap", parents=[common], help="policy-replay bootstrap")
    record_input(p)
    p.add_argument("--policy", choices=["ladder", "constant"], default="ladder")
    p.add_argument("--policy-config")
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--empty-arm", choices=["borrow", "discard"], default="borrow")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("variance", parents=[common], help="delta-method variance and normal CI")
    record_input(p)
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("montecarlo", parents=[common], help="replication study")
    p.add_argument("--config")
    p.add_argument("--R", type=int, default=None)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--bootstrap", action="store_true")
    p.add_argument("--full-scale", action="store_true", help="R=1000 unless --R is given")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--empty-arm", choices=["borrow", "discard"], default="borrow")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("ingest", parents=[common], help="match throttled-out controls in a platform log")
    p.add_argument("--log", required=True)
    p.add_argument("--emit-records", required=True)
    p.add_argument("--strict", action="store_true", help="fail on hours without matched controls")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DegeneracyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (DataError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
