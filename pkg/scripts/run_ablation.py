"""Clip-factor ablation at 16x: median V_unc, precision and recall per b.

usage: python scripts/run_ablation.py [config.yaml] [--jobs N]
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from sgr.experiment import b_label, load_config, run_b_ablation


def main():
    p = argparse.ArgumentParser()
    p.add_argument("config", nargs="?", default=str(Path(__file__).parents[1] / "configs" / "ablate_b.yaml"))
    p.add_argument("--jobs", type=int, default=os.cpu_count())
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO)
    cfg = load_config(args.config, jobs=args.jobs)
    res = run_b_ablation(cfg)
    print(f"{'b':>8}{'V_unc':>9}{'P(S_lo)':>9}{'R(S_up)':>9}")
    for b in cfg.b_values:
        sel = [r for r in res.records if r.method == b_label(b)]
        print(
            f"{b:>8g}{np.median([r.v_unc for r in sel]):>9.1f}"
            f"{np.median([r.precision_lower for r in sel]):>9.3f}{np.median([r.recall_upper for r in sel]):>9.3f}"
        )
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
