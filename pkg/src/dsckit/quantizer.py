"""Per-source high-rate scalar quantizer design.

The quantizers are designed independently per source on marginal training
data (Lloyd-Max) and are frozen before the joint design of the remaining
system components.
"""

from __future__ import annotations

import numpy as np

from .model import DegenerateDataError, HighRateQuantizer

__all__ = ["design_lloyd_max", "quantize", "quantize_array"]


def design_lloyd_max(samples, regions: int, tol: float = 1e-6,
                     max_iters: int = 200, history: list | None = None) -> HighRateQuantizer:
    """Design a scalar quantizer by alternating partition and centroid updates.

    Codewords are initialized at the mid-quantiles of the sample set
    (deterministic and well spread).  Boundaries are the midpoints of
    adjacent codewords.  An empty cell is re-seeded at the sample farthest
    from its current codeword.  Iteration stops when the relative distortion
    change drops below ``tol`` or after ``max_iters`` passes.

    ``history``, if given, receives the empirical distortion after every
    iteration (non-increasing).
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size < 1 or not np.all(np.isfinite(samples)):
        raise ValueError("samples must be a non-empty finite array")
    if regions < 2:
        raise ValueError("need at least 2 regions")
    if np.all(samples == samples[0]):
        raise DegenerateDataError("all samples identical; cannot place distinct codewords")

    probs = (np.arange(regions) + 0.5) / regions
    codewords = np.quantile(samples, probs)
    prev_dist = None
    for _ in range(max_iters):
        boundaries = 0.5 * (codewords[1:] + codewords[:-1])
        idx = np.searchsorted(boundaries, samples, side="right")
        counts = np.bincount(idx, minlength=regions)
        sums = np.bincount(idx, weights=samples, minlength=regions)
        new = codewords.copy()
        nonempty = counts > 0
        new[nonempty] = sums[nonempty] / counts[nonempty]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            taken = np.zeros(samples.size, dtype=bool)
            for cell in empty:
                gaps = np.abs(samples - codewords[cell])
                gaps[taken] = -np.inf
                far = int(np.argmax(gaps))
                taken[far] = True
                new[cell] = samples[far]
            new.sort()
        codewords = new
        # distortion under nearest-codeword assignment to the updated codewords
        boundaries = 0.5 * (codewords[1:] + codewords[:-1])
        idx = np.searchsorted(boundaries, samples, side="right")
        dist = float(np.mean((samples - codewords[idx]) ** 2))
        if history is not None:
            history.append(dist)
        if prev_dist is not None and abs(prev_dist - dist) <= tol * max(prev_dist, 1e-300):
            break
        prev_dist = dist

    if np.any(np.diff(codewords) <= 0):
        raise DegenerateDataError(
            "samples cannot support the requested number of distinct regions")
    boundaries = 0.5 * (codewords[1:] + codewords[:-1])
    return HighRateQuantizer(boundaries, codewords)


def quantize(x: float, q: HighRateQuantizer) -> int:
    """Region index containing ``x``; a boundary belongs to the region on its right."""
    return int(np.searchsorted(q.boundaries, x, side="right"))


def quantize_array(xs, q: HighRateQuantizer) -> np.ndarray:
    """Vectorized :func:`quantize`."""
    return np.searchsorted(q.boundaries, np.asarray(xs), side="right").astype(np.int64)
