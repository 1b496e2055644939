"""Correlation primitives behind likeness (ILI) and correlation (IOC) indices."""

from __future__ import annotations

from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import DomainError
from .traces import WeightedSeries


def _values(s):
    return s.values if isinstance(s, WeightedSeries) else np.asarray(s, dtype=np.float64)


def pearson(a, b) -> float:
    """Sample Pearson correlation of two series, aligned by truncation to the shorter one.

    A series with no spread has no defined correlation; two equal constant
    series count as 1.0 and anything else involving a constant series as 0.0.
    """
    x = _values(a)
    y = _values(b)
    if len(x) == 0 or len(y) == 0:
        raise DomainError("pearson needs non-empty series")
    n = min(len(x), len(y))
    x = x[:n]
    y = y[:n]
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    # relative floor: deviations at rounding level are not spread
    if sxx <= 1e-24 * max(1.0, float(x @ x)) or syy <= 1e-24 * max(1.0, float(y @ y)):
        return 1.0 if np.array_equal(x, y) else 0.0
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def compute_ili(runs: Sequence) -> float:
    """Index of likeness: mean Pearson correlation over all unordered pairs of runs."""
    if len(runs) < 2:
        raise DomainError("ILI needs at least two runs")
    vals = [_values(r) for r in runs]
    return float(np.mean([pearson(a, b) for a, b in combinations(vals, 2)]))


def pairwise_matrix(runs: Sequence) -> np.ndarray:
    vals = [_values(r) for r in runs]
    m = np.eye(len(vals))
    for i, j in combinations(range(len(vals)), 2):
        m[i, j] = m[j, i] = pearson(vals[i], vals[j])
    return m


def window_sums(series, h: int) -> np.ndarray:
    """Sum consecutive non-overlapping windows of ``h`` values; a short last window is kept."""
    if h < 1:
        raise DomainError("window size h must be at least 1")
    x = _values(series)
    if h == 1:
        return x.copy()
    return np.add.reduceat(x, np.arange(0, len(x), h)) if len(x) else x.copy()
