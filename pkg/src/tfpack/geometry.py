"""Euclidean distances, global pairwise-distance statistics and threshold calibration."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dataset import Dataset
from .errors import ConstraintError, InputError

DEFAULT_EXACT_LIMIT = 20_000
DEFAULT_SAMPLE_CAP = 5_000_000
DEFAULT_PERCENT = 2.0
_TILE = 64


def distance(a, b) -> float:
    """Euclidean distance, computed in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return math.sqrt(float(np.dot(diff, diff)))


@dataclass(eq=False)
class DistanceStats:
    """Summary of the pairwise-distance distribution.

    ``count`` is always the total number of unordered pairs; ``evaluated`` is
    how many of them were actually measured (equal to ``count`` when
    ``mode == "exact"``).
    """

    count: int
    evaluated: int
    mode: str
    min: float
    max: float
    mean: float
    _values: np.ndarray = field(repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def percentile(self, p: float) -> float:
        """Distance at percentile ``p`` in [0, 100].

        Linear interpolation between the closest order statistics: with the
        N measured distances sorted ascending as x[0..N-1] and
        h = (N - 1) * p / 100, the result is
        x[floor(h)] + (h - floor(h)) * (x[floor(h) + 1] - x[floor(h)]).
        """
        p = float(p)
        if not 0.0 <= p <= 100.0 or math.isnan(p):
            raise ConstraintError(f"percentile must be in [0, 100], got {p}")
        n = self._values.shape[0]
        h = (n - 1) * p / 100.0
        lo = min(int(math.floor(h)), n - 1)
        hi = min(lo + 1, n - 1)
        with self._lock:
            # in-place partial ordering keeps memory flat for 10^8 pairs
            self._values.partition([lo, hi] if hi != lo else lo)
            x_lo = float(self._values[lo])
            x_hi = float(self._values[hi])
        return x_lo + (h - lo) * (x_hi - x_lo)

    # name used throughout the docs for the queryable p -> distance mapping
    percentile_fn = percentile

    def summary(self) -> dict:
        return {
            "count": self.count,
            "evaluated": self.evaluated,
            "mode": self.mode,
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "percentiles": {str(p): self.percentile(p) for p in (1, 2, 5, 25, 50, 75, 95)},
        }


def _as_matrix(data) -> np.ndarray:
    emb = data.embeddings if isinstance(data, Dataset) else np.asarray(data)
    if emb.ndim != 2:
        raise InputError(f"expected a 2-d embedding matrix, got shape {emb.shape}")
    if emb.dtype not in (np.float32, np.float64):
        emb = emb.astype(np.float64)
    return np.ascontiguousarray(emb)


def pairwise_stats(
    data,
    sample_cap: int | None = None,
    seed: int = 0,
    exact_limit: int = DEFAULT_EXACT_LIMIT,
) -> DistanceStats:
    """Statistics over all unordered pairs of embedding rows.

    Exact when ``n <= exact_limit``; otherwise ``sample_cap`` pairs (default
    5 million) are drawn uniformly with replacement using ``seed``.
    """
    emb = _as_matrix(data)
    n = emb.shape[0]
    if n < 2:
        raise ConstraintError(f"pairwise statistics need at least 2 samples, got {n}")
    total = n * (n - 1) // 2
    cap = DEFAULT_SAMPLE_CAP if sample_cap is None else int(sample_cap)
    if cap < 1:
        raise ConstraintError(f"sample_cap must be positive, got {sample_cap}")

    if n <= exact_limit or cap >= total:
        values = _kernels.condensed_distances(emb, _TILE)
        mode = "exact"
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=cap)
        j = rng.integers(0, n - 1, size=cap)
        j = j + (j >= i)
        values = _kernels.pair_distances(emb, np.minimum(i, j), np.maximum(i, j))
        mode = "sampled"

    return DistanceStats(
        count=total,
        evaluated=int(values.shape[0]),
        mode=mode,
        min=float(values.min()),
        max=float(values.max()),
        mean=float(values.sum() / values.shape[0]),
        _values=values,
    )


def calibrate_threshold(stats: DistanceStats, percent: float = DEFAULT_PERCENT) -> float:
    """Threshold t = the ``percent``-th percentile of pairwise distances.

    ``percent`` must lie in (0, 100]; 100 yields the maximum distance.
    """
    percent = float(percent)
    if not 0.0 < percent <= 100.0:
        raise ConstraintError(f"threshold percent must be in (0, 100], got {percent}")
    return stats.percentile(percent)
