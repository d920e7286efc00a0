"""Clipping-range selection over calibration histograms.

Max clipping keeps the full observed range.  KL clipping sweeps candidate
windows of the 2048-bin histogram and keeps the window whose 128-level
re-quantization best preserves the distribution:

  * candidates are window widths i = 128 .. 2048 bins; nonnegative
    distributions use prefix windows [0, i), signed ones use windows
    centered on the bin holding value 0.0 (clipped to the histogram), so
    thresholds stay symmetric around the distribution even when the
    observed range is skewed by a one-sided outlier;
  * P = window counts with all outlier mass merged into the window's edge
    bin(s);
  * Q = the window regrouped into 128 contiguous groups of i // 128 bins
    (last group absorbs the remainder); each group's (unmerged) sum is
    spread uniformly over the bins of that group which are nonzero in P;
  * KL = sum over bins with P > 0 of P * (ln P - ln Q), divided by total
    mass; Q = 0 under P > 0 makes the candidate infeasible (infinite KL);
  * ties break toward the smaller window.

The sweep returns the chosen window's bin-edge values, so a full-range
winner returns exactly (min_seen, max_seen).
"""

from __future__ import annotations

import math

import numpy as np

from .calibration import N_BINS, TensorHistogram


def clip_range_max(h: TensorHistogram) -> tuple[float, float]:
    return float(h.min_seen), float(h.max_seen)


def _window_kl(win: np.ndarray, ref: np.ndarray, levels: int) -> float:
    """KL between merged window ref (P) and its regrouped spread (Q)."""
    i = len(win)
    m = i // levels
    starts = np.arange(levels) * m
    sums = np.add.reduceat(win, starts)
    nz = ref > 0
    nz_per_group = np.add.reduceat(nz.astype(np.float64), starts)
    gidx = np.minimum(np.arange(i) // m, levels - 1)
    q = np.zeros(i)
    q[nz] = sums[gidx[nz]] / nz_per_group[gidx[nz]]
    if np.any(nz & (q == 0.0)):
        return math.inf
    p = ref[nz]
    return float(np.sum(p * (np.log(p) - np.log(q[nz]))) / ref.sum())


def clip_range_kl(h: TensorHistogram, n: int = 8) -> tuple[float, float]:
    if h.n_samples <= 0:
        raise ValueError(f"histogram {h.tensor_id!r} is empty")
    lo, hi = float(h.min_seen), float(h.max_seen)
    if lo == hi:
        return lo, hi
    counts = np.asarray(h.bin_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return lo, hi
    levels = 2 ** (n - 1)
    signed = lo < 0.0
    zero_bin = int((0.0 - lo) / ((hi - lo) / N_BINS)) if signed else 0
    cum = np.cumsum(counts)
    edges = h.bin_edges()

    best_kl = math.inf
    best = (0, N_BINS)
    for i in range(levels, N_BINS + 1):
        start = min(max(zero_bin - i // 2, 0), N_BINS - i) if signed else 0
        end = start + i
        win = counts[start:end]
        ref = win.copy()
        if start > 0:
            ref[0] += cum[start - 1]
        ref[-1] += total - cum[end - 1]
        kl = _window_kl(win, ref, levels)
        if kl < best_kl:
            best_kl = kl
            best = (start, end)
    start, end = best
    return float(edges[start]), float(edges[end])


def clipped_range(h: TensorHistogram, mode: str, n: int = 8) -> tuple[float, float]:
    """Memoized dispatch; KL sweeps are reused across configurations."""
    if mode not in ("Max", "KL"):
        raise ValueError(f"unknown clipping mode {mode!r}")
    key = (mode, n)
    if key not in h._range_cache:
        h._range_cache[key] = clip_range_max(h) if mode == "Max" else clip_range_kl(h, n)
    return h._range_cache[key]
