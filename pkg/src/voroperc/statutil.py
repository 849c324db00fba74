"""Small shared statistics helpers."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["wilson_interval", "bootstrap_ci"]


def wilson_interval(k, n, z=1.959963984540054):
    """Wilson score interval for a binomial proportion: (p_hat, lo, hi)."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= k <= n:
        raise ValueError("k must lie in [0, n]")
    p = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    # clamp away roundoff at the k=0 / k=n endpoints
    return p, min(max(center - half, 0.0), p), max(min(center + half, 1.0), p)


def bootstrap_ci(samples, statistic, n_boot, gen, level=0.95):
    """Percentile bootstrap interval of statistic(samples) over resamples."""
    samples = np.asarray(samples)
    if samples.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    vals = np.empty(n_boot)
    n = samples.shape[0]
    for b in range(n_boot):
        idx = gen.integers(0, n, size=n)
        vals[b] = statistic(samples[idx])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(vals, [alpha, 1.0 - alpha])
    return float(lo), float(hi)
