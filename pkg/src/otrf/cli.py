"""Command-line benchmark runner.

Usage: otrf <kind> --config run.cfg [--seed N] [--out-dir DIR] [--threads K]

The config file uses key=value sections; every resolved value is echoed to
config.echo next to summary.json and trials.csv.  Exit codes: 0 success,
2 configuration problems, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import NumericalError
from .experiments import EXPERIMENT_KINDS, ConfigError, parse_config_file, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otrf", description="coupled random-feature benchmarks"
    )
    parser.add_argument(
        "kind",
        choices=EXPERIMENT_KINDS,
        help="experiment to run (must match the config's kind when both given)",
    )
    parser.add_argument("--config", required=True, help="path to the run config file")
    parser.add_argument("--seed", type=int, default=None, help="override master seed")
    parser.add_argument("--out-dir", default=None, help="report directory")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "kind": args.kind,
        "seed": args.seed,
        "out_dir": args.out_dir,
        "threads": args.threads,
    }
    try:
        cfg = parse_config_file(args.config, overrides)
        summary = run(cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    for key in sorted(summary["results"]) if isinstance(summary["results"], dict) else []:
        print(f"{key}: {summary['results'][key]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
