"""Command line: ``nashbcd {run,verify,gradcheck,list}``."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from . import harness
from .harness import EXIT_CONFIG, EXIT_UNKNOWN, ConfigError, UnknownNameError


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nashbcd", description="Adaptive block coordinate descent for Nash equilibria.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run solvers on a problem and write CSV traces plus summary.json")
    r.add_argument("--config", required=True, help="experiment config file")
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    r.add_argument("--tol", type=float, help="stationarity tolerance (overrides solver.tol)")

    v = sub.add_parser("verify", help="run the invariant battery and print a JSON report")
    v.add_argument("scope", nargs="?", default="all", help="all, a check name or a problem name")
    v.add_argument("--out", help="also write the report to this directory")

    g = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    g.add_argument("problem", nargs="?", default="all", help="problem name or 'all'")
    g.add_argument("--samples", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=harness.GRADCHECK_TOL)

    sub.add_parser("list", help="list problems, solver variants and verify scopes")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            return harness.cmd_list()
        if args.command == "gradcheck":
            if args.samples < 0:
                raise ConfigError("--samples must be non-negative")
            return harness.cmd_gradcheck(args.problem, args.samples, args.seed, args.tol)
        if args.command == "verify":
            return harness.cmd_verify(args.scope, args.out)
        cfg = harness.load_config(args.config)
        if args.seed is not None:
            cfg.seeds = [args.seed]
        if args.tol is not None:
            if args.tol < 0:
                raise ConfigError("--tol must be non-negative")
            cfg.tol = args.tol
        return harness.cmd_run(cfg, args.out)
    except UnknownNameError as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return EXIT_UNKNOWN
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
