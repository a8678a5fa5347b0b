"""Consolidated statistics over latency samples."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

COLUMNS = ("mean", "std", "skew", "kurtosis", "min", "q25", "q50", "q75", "p99", "max")
QUANTILES = {"q25": 0.25, "q50": 0.50, "q75": 0.75, "p99": 0.99}


@dataclass(frozen=True)
class StatsSummary:
    mean: float
    std: float
    skew: Optional[float]
    kurtosis: Optional[float]
    min: float
    q25: float
    q50: float
    q75: float
    p99: float
    max: float
    n: int

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in COLUMNS)

    def as_dict(self) -> dict:
        return asdict(self)


def summarize(samples: Sequence[float]) -> StatsSummary:
    """Mean, sample std (n-1), g1 skew, excess g2 kurtosis and linear-interpolated
    quantiles. Skew is None for n < 3, kurtosis for n < 4, both when the
    sample has zero spread. std of a single sample is reported as 0."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("cannot summarize an empty sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    mean = float(x.mean())
    d = x - mean
    m2 = float(np.mean(d * d))
    std = math.sqrt(m2 * n / (n - 1)) if n > 1 else 0.0
    skew = kurt = None
    if m2 > 0:
        if n >= 3:
            skew = float(np.mean(d ** 3)) / m2 ** 1.5
        if n >= 4:
            kurt = float(np.mean(d ** 4)) / (m2 * m2) - 3.0
    xs = np.sort(x)
    q = np.quantile(xs, list(QUANTILES.values()), method="linear")
    lo, hi = float(xs[0]), float(xs[-1])
    # floating point can nudge the mean a hair outside the range
    mean = min(max(mean, lo), hi)
    return StatsSummary(mean, std, skew, kurt, lo, *(float(v) for v in q), hi, n)


def jitter(series: Sequence[float]) -> float:
    """Mean absolute difference between consecutive samples."""
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise ValueError("jitter needs at least two samples")
    return float(np.mean(np.abs(np.diff(x))))


def histogram(samples: Sequence[float], bin_width: float) -> list[tuple[float, int]]:
    """Counts per ``[k*w, (k+1)*w)``, contiguous from the lowest to the highest
    occupied bin. Returns ``(bin_lo, count)`` pairs."""
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    if len(samples) == 0:
        return []
    idx = np.floor(np.asarray(samples, dtype=float) / bin_width).astype(np.int64)
    k0 = int(idx.min())
    counts = np.bincount(idx - k0)
    return [((k0 + i) * bin_width, int(c)) for i, c in enumerate(counts)]
