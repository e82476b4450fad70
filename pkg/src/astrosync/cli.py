"""Command-line entry point: ``astrosync <experiment> [--config FILE] ...``."""

import argparse
import json
import logging
import sys

from .experiments.config import ConfigError, ExperimentConfig, load_config
from .experiments.runners import run_experiment

SUBCOMMANDS = ("sweep-frequency", "lock-pair", "mc-variation", "binding", "revoke")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="astrosync", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
        p.add_argument("--runs", type=_positive_int, help="runs, seeds or samples per point")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--threads", type=_positive_int, help="worker processes")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config) if args.config else ExperimentConfig(experiment=args.command)
        if args.config and config.experiment != args.command:
            logging.getLogger("astrosync").warning(
                "config names experiment '%s'; running '%s'", config.experiment, args.command)
        config = config.with_overrides(experiment=args.command, seed=args.seed, runs=args.runs,
                                       output=args.out, threads=args.threads)
    except (ConfigError, OSError) as exc:
        print(f"astrosync: {exc}", file=sys.stderr)
        return 2
    summary = run_experiment(config, config.output)
    json.dump({"experiment": summary.experiment, "config_hash": summary.config_hash,
               "output": config.output, "wall_clock_s": round(summary.wall_clock, 3)},
              sys.stdout, indent=2)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
