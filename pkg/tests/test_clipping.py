"""Range clipping: Max is exact min/max; the divergence-based mode must
match a plain-Python brute-force sweep bin for bin."""

import numpy as np
import pytest

from oracles import kl_sweep_brute
from ptqtune import TensorHistogram, clip_range_kl, clip_range_max, clipped_range
from ptqtune.calibration import N_BINS


def hist_from_values(values, tid="t"):
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        counts = np.zeros(N_BINS, dtype=np.int64)
        counts[0] = values.size
    else:
        counts, _ = np.histogram(values, bins=N_BINS, range=(lo, hi))
    return TensorHistogram(tensor_id=tid, min_seen=lo, max_seen=hi,
                           bin_counts=counts.astype(np.int64),
                           n_samples=values.size)


def hist_from_counts(counts, lo, hi, tid="t"):
    counts = np.asarray(counts, dtype=np.int64)
    assert counts.shape == (N_BINS,)
    return TensorHistogram(tensor_id=tid, min_seen=float(lo), max_seen=float(hi),
                           bin_counts=counts, n_samples=int(counts.sum()))


def test_max_mode_returns_observed_range():
    h = hist_from_values(np.linspace(-3.5, 8.25, 1000))
    assert clip_range_max(h) == (-3.5, 8.25)


def test_uniform_histogram_keeps_full_range():
    # every window drops mass into merged edge bins, so only the full
    # window is divergence-free: threshold == max_seen
    h = hist_from_counts(np.full(N_BINS, 10), 0.0, 10.0)
    lo, hi = clip_range_kl(h)
    assert (lo, hi) == (0.0, 10.0)


def test_gaussian_keeps_bulk_may_trim_tails():
    rng = np.random.default_rng(3)
    h = hist_from_values(rng.standard_normal(20000))
    lo, hi = clip_range_kl(h)
    # tail trimming is allowed (that is the point of the sweep) but the
    # central mass must survive and the range stays inside what was seen
    assert h.min_seen <= lo <= -2.5 and 2.5 <= hi <= h.max_seen


def test_outlier_is_clipped_away():
    rng = np.random.default_rng(4)
    vals = np.concatenate([rng.standard_normal(20000), [100.0]])
    h = hist_from_values(vals)
    lo, hi = clip_range_kl(h)
    assert abs(hi) < 100.0
    assert abs(lo) < 100.0
    assert hi > 2.0  # keeps the bulk


def test_two_point_histogram_shrinks_to_smallest_window():
    # mass only in bins 0 and 127: the 128-bin window already represents
    # the distribution exactly, so the sweep stops at the smallest window
    counts = np.zeros(N_BINS, dtype=np.int64)
    counts[0] = 500
    counts[127] = 500
    h = hist_from_counts(counts, 0.0, 2048.0)
    lo, hi = clip_range_kl(h)
    edges = h.bin_edges()
    assert (lo, hi) == (float(edges[0]), float(edges[128]))


@pytest.mark.parametrize("case", range(8))
def test_kl_matches_brute_force_sweep(case):
    rng = np.random.default_rng(100 + case)
    kind = case % 4
    if kind == 0:
        vals = rng.standard_normal(5000)
    elif kind == 1:
        vals = rng.uniform(-2, 5, size=5000)
    elif kind == 2:
        vals = np.concatenate([rng.standard_normal(5000),
                               rng.choice([-60.0, 80.0], size=3)])
    else:
        vals = np.abs(rng.standard_normal(5000))  # one-sided
    h = hist_from_values(vals)
    lo, hi = clip_range_kl(h)
    _, _, blo, bhi = kl_sweep_brute(h.bin_counts, h.min_seen, h.max_seen)
    assert (lo, hi) == (blo, bhi)


def test_signed_window_is_centered():
    rng = np.random.default_rng(9)
    vals = np.concatenate([rng.standard_normal(30000), [-50.0, 50.0]])
    h = hist_from_values(vals)
    lo, hi = clip_range_kl(h)
    assert lo < 0 < hi
    # roughly symmetric window on a symmetric distribution
    assert abs(abs(lo) - abs(hi)) < 0.2 * (hi - lo)


def test_dispatch_and_memoization():
    h = hist_from_values(np.random.default_rng(0).standard_normal(4000))
    assert clipped_range(h, "Max") == (h.min_seen, h.max_seen)
    a = clipped_range(h, "KL")
    b = clipped_range(h, "KL")  # second call hits the cache
    assert a == b
    assert ("KL", 8) in h._range_cache
    with pytest.raises(ValueError):
        clipped_range(h, "percentile")


def test_degenerate_single_bin_histogram():
    h = hist_from_values(np.full(100, 3.0))
    assert clip_range_max(h) == (3.0, 3.0)
    lo, hi = clip_range_kl(h)
    assert lo == hi == 3.0
