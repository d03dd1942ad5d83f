"""Acceleration sweep (SGR vs RR) followed by the median trend table.

usage: python scripts/run_sweep.py [config.yaml] [--jobs N]
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from sgr.experiment import load_config, run_experiment

sys.path.insert(0, str(Path(__file__).parent))
from trend_table import main as print_table  # noqa: E402


def main():
    p = argparse.ArgumentParser()
    p.add_argument("config", nargs="?", default=str(Path(__file__).parents[1] / "configs" / "default.yaml"))
    p.add_argument("--jobs", type=int, default=os.cpu_count())
    p.add_argument("--out")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO)
    cfg = load_config(args.config, jobs=args.jobs, out=args.out)
    res = run_experiment(cfg)
    print_table(res.out_dir / "summary.csv")
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
