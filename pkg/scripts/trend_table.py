"""Print the median precision / recall / V_unc ratio table from a summary.csv.

usage: python scripts/trend_table.py runs/sweep/summary.csv
"""

import csv
import sys
from collections import defaultdict


def main(path):
    cells = defaultdict(dict)
    with open(path) as fh:
        for row in csv.DictReader(fh):
            cells[(row["method"], float(row["acc"]), row["class"])][row["metric"]] = float(row["median"])
    print(f"{'method':<14}{'acc':>5}{'class':>6}{'P(S_lo)':>9}{'R(S_up)':>9}{'Vunc/V':>9}{'SSIM_up':>9}{'PSNR_up':>9}")
    for (method, acc, c), m in sorted(cells.items()):
        print(
            f"{method:<14}{acc:>5g}{c:>6}{m['precision_lower']:>9.3f}{m['recall_upper']:>9.3f}"
            f"{m['v_unc_ratio']:>9.3f}{m['ssim_upper']:>9.3f}{m['psnr_upper']:>9.2f}"
        )


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "runs/sweep/summary.csv")
