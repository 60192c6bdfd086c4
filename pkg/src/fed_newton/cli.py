"""Command line entry point: ``fed-newton run|plot|rounds-to-target``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, parse_config
from .experiment import rounds_to_target, run_experiment
from .trace import read_csv

# flag -> config key
RUN_FLAGS = {
    "--algo": "algo", "--dataset": "dataset", "--alpha": "alpha", "--R": "R", "--T": "T",
    "--batch": "batch", "--subset": "subset", "--lambda": "lambda", "--stepsize": "stepsize",
    "--seed": "seed", "--repeats": "repeats", "--out": "out", "--threads": "threads",
    "--tol": "tol", "--power-iters": "power_iters",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fed-newton", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write its CSV trace")
    run.add_argument("--config", help="key = value config file; flags override it")
    for flag, key in RUN_FLAGS.items():
        run.add_argument(flag, dest=key, default=None, metavar=key.upper())

    plot = sub.add_parser("plot", help="render SVG charts from trace CSVs")
    plot.add_argument("traces", nargs="+")
    plot.add_argument("--out", default="plots")
    plot.add_argument("--metric", action="append", dest="metrics")
    plot.add_argument("--log", action="store_true", help="log-scale y axis")

    rtt = sub.add_parser("rounds-to-target", help="first round reaching a validation accuracy")
    rtt.add_argument("trace")
    rtt.add_argument("--target", type=float, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        flags = {key: getattr(args, key) for key in RUN_FLAGS.values()}
        try:
            config = parse_config(args.config, flags)
        except ConfigError as exc:
            print(f"fed-newton: {exc}", file=sys.stderr)
            return 2
        print(run_experiment(config))
        return 0
    if args.command == "plot":
        from .plots import emit_plots

        metrics = args.metrics or ["train_loss", "val_accuracy"]
        for path in emit_plots(args.traces, args.out, metrics, log_scale=args.log):
            print(path)
        return 0
    records = read_csv(args.trace)
    try:
        t = rounds_to_target(records, args.target)
    except ValueError as exc:
        print(f"fed-newton: {exc}", file=sys.stderr)
        return 2
    print("none" if t is None else t)
    return 0


if __name__ == "__main__":
    sys.exit(main())
