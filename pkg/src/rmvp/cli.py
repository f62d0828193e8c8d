"""Command line entry point: ``rmvp {verify,quad,trace,helix} --config FILE [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .studies import STUDY_RUNNERS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmvp", description="Interface RMVP eddy-current studies")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="study", required=True)
    for name in STUDY_RUNNERS:
        p = sub.add_parser(name, help=f"run the {name} study")
        p.add_argument("--config", required=True, help="YAML study configuration")
        p.add_argument("--out", default=None, help="output directory for the CSV files (default: output_dir)")
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                       help="log progress to stderr")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if cfg.study != args.study:
            raise ConfigError(f"config declares study {cfg.study!r} but subcommand is {args.study!r}")
        STUDY_RUNNERS[args.study](cfg, args.out if args.out is not None else cfg.output_dir)
    except (ConfigError, OSError) as exc:
        print(f"rmvp: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver failures and bad geometry
        print(f"rmvp: {args.study} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
