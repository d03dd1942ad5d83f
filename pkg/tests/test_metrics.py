import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sgr.metrics import (
    SUMMARY_HEADER,
    BoundsMetrics,
    aggregate,
    nearest_rank,
    precision,
    psnr,
    recall,
    ssim,
    uncertainty_volume,
    write_summary,
)

masks = hnp.arrays(bool, (5, 6))


def confusion(pred, truth):
    tp = fp = fn = 0
    for p, t in zip(pred.ravel(), truth.ravel()):
        tp += p and t
        fp += p and not t
        fn += t and not p
    return tp, fp, fn


@given(masks, masks)
def test_precision_recall_match_confusion_counts(pred, truth):
    tp, fp, fn = confusion(pred, truth)
    assert precision(pred, truth) == (1.0 if tp + fp == 0 else tp / (tp + fp))
    assert recall(pred, truth) == (1.0 if tp + fn == 0 else tp / (tp + fn))


@given(masks, masks, st.randoms())
def test_permutation_invariance(pred, truth, rnd):
    perm = list(range(pred.size))
    rnd.shuffle(perm)
    p2, t2 = pred.ravel()[perm], truth.ravel()[perm]
    assert precision(p2, t2) == precision(pred, truth)
    assert recall(p2, t2) == recall(pred, truth)


def test_precision_recall_examples():
    truth = np.array([1, 1, 0, 0], bool)
    assert precision(np.array([1, 0, 0, 0], bool), truth) == 1.0
    assert precision(np.array([0, 0, 1, 0], bool), truth) == 0.0
    assert recall(np.array([1, 1, 1, 0], bool), truth) == 1.0
    assert recall(np.array([0, 0, 1, 1], bool), truth) == 0.0
    assert precision(np.zeros(4, bool), truth) == 1.0
    assert recall(truth, np.zeros(4, bool)) == 1.0
    with pytest.raises(ValueError):
        precision(np.zeros(3, bool), truth)


def test_uncertainty_volume_examples():
    assert uncertainty_volume(100, 80) == (20, 0.2)
    assert uncertainty_volume(50, 50) == (0, 0)
    v, r = uncertainty_volume(0, 0)
    assert v == 0 and math.isnan(r)
    assert uncertainty_volume(10, 12)[0] == -2
    with pytest.raises(ValueError):
        uncertainty_volume(-1, 0)


def ssim_oracle(a, b):
    # direct windowed sums over every fully contained 11x11 window
    g = np.exp(-0.5 * (np.arange(-5, 6) / 1.5) ** 2)
    w = np.outer(g, g)
    w /= w.sum()
    L = b.max() - b.min()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            A, B = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = np.sum(w * A), np.sum(w * B)
            va, vb = np.sum(w * (A - ma) ** 2), np.sum(w * (B - mb) ** 2)
            cv = np.sum(w * (A - ma) * (B - mb))
            vals.append((2 * ma * mb + c1) * (2 * cv + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return np.mean(vals)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_matches_windowed_oracle(seed):
    rng = np.random.default_rng(seed)
    b = rng.random((24, 20))
    a = b + 0.2 * rng.standard_normal(b.shape)
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-8)


def test_ssim_matches_scikit_image():
    from skimage.metrics import structural_similarity

    rng = np.random.default_rng(3)
    a, b = rng.random((2, 40, 40))
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=b.max() - b.min())
    assert ssim(a, b) == pytest.approx(ref, abs=1e-10)


def test_ssim_properties():
    rng = np.random.default_rng(4)
    b = rng.random((16, 16))
    assert ssim(b, b) == pytest.approx(1.0, abs=1e-12)
    assert ssim(b + 0.5 * (b.max() - b.min()), b) < 1.0
    a = b + 0.1 * rng.standard_normal(b.shape)
    # joint positive scaling leaves every term unchanged
    assert ssim(3 * a, 3 * b) == pytest.approx(ssim(a, b), abs=1e-12)
    const = np.full((16, 16), 0.3)
    assert ssim(const, const) == 1.0
    assert np.isfinite(ssim(b, const))


def psnr_oracle(a, b):
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (x - y) ** 2
    mse = total / a.size
    return 10 * math.log10((b.max() - b.min()) ** 2 / mse)


def test_psnr():
    rng = np.random.default_rng(5)
    a, b = rng.random((2, 9, 7))
    assert psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-10)
    assert psnr(b, b) == math.inf
    ref = np.array([[0.0, 1.0]])
    assert psnr(ref + np.array([[1.0, -1.0]]), ref) == pytest.approx(0.0)


def record(v, method="SGR", acc=4.0, c=1):
    return BoundsMetrics(method, acc, c, v, v, v, v, v, v, v, v)


def test_nearest_rank_examples():
    assert nearest_rank([1, 2, 3], 25) == 1
    assert nearest_rank([1, 2, 3], 50) == 2
    assert nearest_rank([1, 2, 3], 75) == 3
    assert nearest_rank([5], 25) == 5


def test_aggregate_examples():
    rows = aggregate([record(0.5)])
    assert all(r["median"] == r["p25"] == r["p75"] == 0.5 for r in rows)
    rows = {r["metric"]: r for r in aggregate([record(v / 10) for v in (1, 2, 3)])}
    assert (rows["recall_upper"]["median"], rows["recall_upper"]["p25"], rows["recall_upper"]["p75"]) == (0.2, 0.1, 0.3)
    with pytest.raises(ValueError):
        aggregate([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=100), st.randoms())
@settings(max_examples=50, deadline=None)
def test_aggregate_matches_sort_oracle_and_order_invariant(vals, rnd):
    recs = [record(v) for v in vals]
    shuffled = recs[:]
    rnd.shuffle(shuffled)
    a, b = aggregate(recs), aggregate(shuffled)
    assert a == b
    s = sorted(vals)
    n = len(s)
    row = next(r for r in a if r["metric"] == "precision_lower")
    assert row["p25"] == s[max(1, math.ceil(0.25 * n)) - 1]
    assert row["p75"] == s[max(1, math.ceil(0.75 * n)) - 1]
    mid = s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])
    assert row["median"] == pytest.approx(mid)


def test_aggregate_groups_and_skips_nan(tmp_path):
    recs = [record(0.2, "RR"), record(0.4, "SGR", 8.0), BoundsMetrics("SGR", 8.0, 1, 1.0, 1.0, math.nan, 1, 1, 1, 1)]
    rows = aggregate(recs)
    keys = {(r["method"], r["acc"], r["class"]) for r in rows}
    assert keys == {("RR", 4.0, 1), ("SGR", 8.0, 1)}
    ratio = next(r for r in rows if r["method"] == "SGR" and r["metric"] == "v_unc_ratio")
    assert ratio["median"] == 0.4
    write_summary(rows, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == ",".join(SUMMARY_HEADER)


def test_bounds_metrics_validation():
    with pytest.raises(ValueError):
        BoundsMetrics("SGR", 4.0, 1, 1.5, 0.5, 0.1, 1, 1, 1, 1)
