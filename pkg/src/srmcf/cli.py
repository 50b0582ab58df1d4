"""``mcfrun <config> [--jobs N] [--out DIR] [--steady] [--verify-only]``.

Exit status: 0 when every enabled invariant passes, 1 when one fails, 2 for an
invalid configuration and 3 when the computation aborts (for example on a
non-finite update). The log level comes from ``MCFRUN_LOG_LEVEL`` (default
``WARNING``).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, load_config

LOG_ENV = "MCFRUN_LOG_LEVEL"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcfrun", description="Run a sub-Riemannian mean curvature flow experiment.")
    p.add_argument("config", help="TOML experiment file")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel eps runs (default 1)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    p.add_argument("--steady", action="store_true", help="run every eps to the steady tolerance")
    p.add_argument("--verify-only", action="store_true", help="validate the configuration and exit")
    return p


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        print(f"mcfrun: ignoring unknown {LOG_ENV}={level!r}", file=sys.stderr)
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _setup_logging()
    log = logging.getLogger("mcfrun")
    if args.jobs < 1:
        print("mcfrun: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, steady=args.steady)
    except FileNotFoundError:
        print(f"mcfrun: no such file: {args.config}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"mcfrun: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.verify_only:
        print(f"{args.config}: ok ({cfg.group}, eps={cfg.eps})")
        return EXIT_OK

    from .experiment import run_experiment

    try:
        result = run_experiment(cfg, out_dir=args.out, jobs=args.jobs, steady=args.steady or None)
    except FloatingPointError as exc:
        print(f"mcfrun: aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (OSError, ValueError) as exc:
        print(f"mcfrun: {exc}", file=sys.stderr)
        return EXIT_ABORT
    for name, inv in sorted(result.summary["invariants"].items()):
        log.info("%s: %s (value=%s)", name, "pass" if inv["pass"] else "FAIL", inv["value"])
    status = "pass" if result.passed else "FAIL"
    print(f"mcfrun: {status}; {len(result.files)} files in {args.out or cfg.out_dir}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
