"""Run every config under scripts/configs (or the ones named) through the CLI.

    python scripts/run_all.py                  # all except cifar_smoke
    python scripts/run_all.py cnn_blob bench   # a subset
    python scripts/run_all.py --out runs/      # outputs under runs/<config name>
"""
import argparse
import os
import sys
import time

from owapool.harness.cli import main as cli_main
from owapool.harness.config import load_config

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIG_DIR = os.path.join(HERE, "configs")
NEEDS_DATA = {"cifar_smoke"}


def available():
    return sorted(f[:-5] for f in os.listdir(CONFIG_DIR) if f.endswith(".toml"))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("names", nargs="*", help=f"config names, from {available()}")
    p.add_argument("--out", default="runs")
    p.add_argument("--seed", type=int, default=None)
    args = p.parse_args(argv)
    names = args.names or [n for n in available() if n not in NEEDS_DATA]
    status = 0
    for name in names:
        path = os.path.join(CONFIG_DIR, f"{name}.toml")
        task = load_config(path, check_paths=False).task
        cli_args = [task, "--config", path, "--out", os.path.join(args.out, name)]
        if args.seed is not None:
            cli_args += ["--seed", str(args.seed)]
        t0 = time.perf_counter()
        code = cli_main(cli_args)
        print(f"{name}: exit {code} in {time.perf_counter() - t0:.1f}s")
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
