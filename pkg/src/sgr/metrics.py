"""Bound-quality and image-quality metrics plus median/percentile aggregation."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

__all__ = [
    "BoundsMetrics",
    "precision",
    "recall",
    "uncertainty_volume",
    "ssim",
    "psnr",
    "nearest_rank",
    "aggregate",
    "SUMMARY_HEADER",
    "write_summary",
    "METRIC_NAMES",
]

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5, so an 11x11 window
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"shapes differ: {pred.shape} vs {truth.shape}")
    return pred, truth


def precision(pred: np.ndarray, truth: np.ndarray) -> float:
    """TP / (TP + FP); 1 for an empty prediction."""
    pred, truth = _pair(pred, truth)
    n = np.count_nonzero(pred)
    return 1.0 if n == 0 else np.count_nonzero(pred & truth) / n


def recall(pred: np.ndarray, truth: np.ndarray) -> float:
    """TP / (TP + FN); 1 for an empty truth."""
    pred, truth = _pair(pred, truth)
    n = np.count_nonzero(truth)
    return 1.0 if n == 0 else np.count_nonzero(pred & truth) / n


def uncertainty_volume(v_up: float, v_down: float) -> tuple[float, float]:
    """``(v_up - v_down, (v_up - v_down) / v_up)``; the ratio is NaN when ``v_up == 0``.

    A negative difference means the bounds are inverted; it is returned as is.
    """
    if v_up < 0 or v_down < 0:
        raise ValueError("volumes must be nonnegative")
    v_unc = float(v_up - v_down)
    return v_unc, (v_unc / v_up if v_up > 0 else math.nan)


def _filter(img):
    out = ndimage.gaussian_filter(img, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="constant")
    r = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    return out[r:-r, r:-r]


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM of ``a`` against reference ``b`` over all fully contained 11x11 windows."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < 11:
        raise ValueError("images must be at least 11x11")
    L = float(b.max() - b.min())
    c1, c2 = (SSIM_K1 * L) ** 2, (SSIM_K2 * L) ** 2
    mu_a, mu_b = _filter(a), _filter(b)
    var_a = _filter(a * a) - mu_a**2
    var_b = _filter(b * b) - mu_b**2
    cov = _filter(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    if L == 0:
        # constant reference: both constants vanish, define 0/0 windows as a perfect match
        return float(np.mean(np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)))
    return float(np.mean(num / den))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR of ``a`` against reference ``b`` in dB; ``inf`` when identical."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    L = float(b.max() - b.min())
    if L == 0:
        return -math.inf
    return 10.0 * math.log10(L * L / mse)


@dataclass(frozen=True)
class BoundsMetrics:
    method: str
    acceleration: float
    class_index: int
    precision_lower: float
    recall_upper: float
    v_unc_ratio: float
    ssim_lower: float
    ssim_upper: float
    psnr_lower: float
    psnr_upper: float
    v_unc: float = math.nan
    phantom: int = 0

    def __post_init__(self):
        for name in ("precision_lower", "recall_upper"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def inverted(self) -> bool:
        return self.v_unc < 0


METRIC_NAMES = tuple(
    f.name for f in fields(BoundsMetrics) if f.name not in ("method", "acceleration", "class_index", "phantom")
)


def nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile: the ``ceil(q/100 * n)``-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty sample")
    if not 0 <= q <= 100:
        raise ValueError("q must lie in [0, 100]")
    k = max(1, math.ceil(q / 100.0 * v.size))
    return float(v[k - 1])


SUMMARY_HEADER = ("method", "acc", "class", "metric", "median", "p25", "p75")


def aggregate(records) -> list[dict]:
    """Median and nearest-rank 25th/75th percentiles per (method, acceleration, class, metric).

    NaN entries (an undefined ratio) are left out of their metric. The median
    is the usual midpoint average for even counts.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    groups = defaultdict(list)
    for r in records:
        groups[(r.method, r.acceleration, r.class_index)].append(r)
    rows = []
    for (method, acc, c) in sorted(groups):
        for name in METRIC_NAMES:
            vals = np.array([getattr(r, name) for r in groups[(method, acc, c)]], dtype=float)
            vals = vals[~np.isnan(vals)]
            if vals.size == 0:
                stats = (math.nan,) * 3
            else:
                stats = (float(np.median(vals)), nearest_rank(vals, 25), nearest_rank(vals, 75))
            rows.append(dict(zip(SUMMARY_HEADER, (method, acc, c, name) + stats)))
    return rows


def write_summary(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in SUMMARY_HEADER])


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return v


def as_dict(m: BoundsMetrics) -> dict:
    return asdict(m)
