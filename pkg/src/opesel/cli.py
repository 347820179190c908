"""Command-line entry point: ``opesel select|ops|oracle --config FILE``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import load
from .errors import ConfigError
from .experiments import WORKERS_ENV, execute


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opesel",
        description="Estimator- and policy-selection experiments for off-policy evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "select": "estimator selection over a sweep of evaluation policies",
        "ops": "policy selection among learned candidate policies",
        "oracle": "ground-truth candidate MSE table only",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--out-dir", help="output directory (default: [output] dir)")
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker processes (default: [run] workers, then ${WORKERS_ENV}, then 1)")
        p.add_argument("--strict-alg1", action="store_true",
                       help="retrain the subsampling rule for every candidate")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is not None and args.workers < 1:
        print("opesel: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = load(args.config)
        n_errors, files = execute(args.command, cfg, args.out_dir, args.workers, args.strict_alg1)
    except ConfigError as exc:
        print(f"opesel: config error: {exc}", file=sys.stderr)
        return 2
    for name, path in files.items():
        print(f"{name}: {path}")
    if n_errors:
        print(f"opesel: {n_errors} row(s) recorded errors", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
