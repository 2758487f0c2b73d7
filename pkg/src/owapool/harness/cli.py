"""``owapool <cnn|bow|bench|robust> --config FILE [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 training aborted.
"""
from __future__ import annotations

import argparse
import logging
import sys

from owapool.bow import TrainingAborted
from owapool.harness.config import TASKS, ConfigError, load_config
from owapool.harness.experiments import (run_bench_experiment, run_bow_experiment,
                                         run_cnn_experiment, run_robustness_experiment)

RUNNERS = {
    "cnn": run_cnn_experiment,
    "bow": run_bow_experiment,
    "bench": run_bench_experiment,
    "robust": run_robustness_experiment,
}

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="owapool", description="OWA pooling experiments")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", required=True, help="TOML experiment config")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.task != args.task:
        print(f"config error: config is for task {cfg.task!r}, not {args.task!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = RUNNERS[args.task](cfg, cfg.out)
    except (TrainingAborted, FloatingPointError) as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {cfg.out}/report.json ({len(report.variants)} variants, {len(report.table)} table rows)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
