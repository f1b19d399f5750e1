"""Command-line entry points: simulate, scatter, rates, check."""
from __future__ import annotations

import argparse
import sys

from .config import RunConfig, ci_config, default_config, load_config
from . import runner


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="PATH", help="TOML key-value config file")
    sub.add_argument("--out", metavar="DIR", help="output directory root")
    sub.add_argument("--threads", type=int, help="worker thread count "
                     "(default: RIESZ_KINETICS_THREADS or all cores)")
    sub.add_argument("--alpha", type=float, help="interaction exponent")
    sub.add_argument("--eta", type=float, help="data amplitude (default: derived "
                     "from the smallness target)")
    sub.add_argument("--t-final", type=float, dest="t_final", help="end time")
    force = sub.add_mutually_exclusive_group()
    force.add_argument("--tree", dest="use_tree", action="store_true",
                       default=None, help="tree-accelerated forces")
    force.add_argument("--direct", dest="use_tree", action="store_false",
                       default=None, help="direct-summation forces")
    sub.add_argument("--theta", type=float, help="tree opening angle")
    sub.add_argument("--run-id", help="run directory name")
    sub.add_argument("--preset", choices=("default", "ci"),
                     help="configuration preset to start from")
    sub.add_argument("--verbose", action="store_true")


def _config_from(args: argparse.Namespace) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.preset == "ci":
        cfg = ci_config()
    else:
        cfg = default_config()
    return cfg.with_overrides(
        out_dir=args.out, threads=args.threads, alpha=args.alpha,
        eta=args.eta, t_final=args.t_final, use_tree=args.use_tree,
        theta=args.theta, run_id=args.run_id)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="riesz-kinetics",
        description="Mean-field kinetic simulator with inverse power-law "
                    "interaction and long-time scattering diagnostics.")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, descr in (
        ("simulate", "integrate the flow and write history + field norms"),
        ("scatter", "asymptotic diagnostics of a stored run"),
        ("rates", "fit decay rates and write report.json"),
        ("check", "fast structural invariant suite"),
    ):
        sub = subs.add_parser(name, help=descr)
        if name != "check":
            _add_common(sub)
        else:
            sub.add_argument("--verbose", action="store_true", default=True)

    args = parser.parse_args(argv)
    if args.command == "check":
        return 0 if runner.run_check(verbose=True) else 1

    cfg = _config_from(args)
    try:
        if args.command == "simulate":
            runner.run_simulate(cfg, quiet=not args.verbose)
            print(f"run written to {runner.run_dir_of(cfg)}")
        elif args.command == "scatter":
            runner.run_scatter(cfg, quiet=not args.verbose)
            print(f"scattering tables written to {runner.run_dir_of(cfg)}")
        elif args.command == "rates":
            report = runner.run_rates(cfg)
            n_pass = sum(1 for e in report["entries"] if e["pass"])
            n_triv = sum(1 for e in report["entries"] if e.get("trivial"))
            print(f"report.json: {n_pass}/{len(report['entries'])} rates pass"
                  + (f" ({n_triv} trivial)" if n_triv else ""))
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
