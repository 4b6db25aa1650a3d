"""Command line entry point.

Exit codes: 0 ok, 1 validation error, 2 runtime or step failure, 3 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .potential import InvalidSpecError
from .runner import OutputError, cmd_ensemble, cmd_run
from .stepper import StepFailure
from .verify import SUITES, format_table, run_suite

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes for ensembles (default: min(trajectories, CPUs))")
    common.add_argument("--out", type=Path, default=None, help="output directory (overrides [output] directory)")
    common.add_argument("--seed", type=int, default=None, help="overrides [init] seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="chks", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="simulate one trajectory")
    r.add_argument("config", type=Path)
    e = sub.add_parser("ensemble", parents=[common], help="simulate an ensemble from a ball of initial data")
    e.add_argument("config", type=Path)
    v = sub.add_parser("verify", parents=[common], help="run a built-in verification suite")
    v.add_argument("level", choices=sorted(SUITES))
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "verify":
        results = run_suite(args.level)
        print(format_table(results))
        return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = args.out if args.out is not None else Path(cfg.output.directory)
        base = args.config.parent
        if args.command == "run":
            return cmd_run(cfg, out, base)
        n = cfg.ensemble.n_samples
        workers = args.workers or min(n, os.cpu_count() or 1)
        return cmd_ensemble(cfg, out, workers, base)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except (InvalidSpecError, OutputError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StepFailure as exc:
        print(f"step failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
