"""Shared brute-force oracles, independent of the library's fast paths."""

import numpy as np
import pytest

from chenstein.points import PointConfiguration, Window


def brute_degree(points: np.ndarray, rule, z) -> int:
    """All-pairs scan degree oracle."""
    if points.shape[0] == 0:
        return 0
    diffs = np.asarray(z, dtype=float).reshape(1, -1) - points
    return int(rule.indicator(diffs).sum())


def brute_edge_count(points: np.ndarray, rule) -> int:
    """Double-loop unordered pair count oracle."""
    n = points.shape[0]
    total = 0
    for i in range(n):
        for j in range(i + 1, n):
            if rule.indicator((points[i] - points[j]).reshape(1, -1))[0]:
                total += 1
    return total


@pytest.fixture
def unit_window_1d():
    return Window.unit(1)


@pytest.fixture
def unit_window_2d():
    return Window.unit(2)


def random_configuration(rng, window: Window, max_points: int = 40) -> PointConfiguration:
    n = int(rng.integers(0, max_points + 1))
    pts = rng.uniform(window.lows, window.highs, size=(n, window.dimension))
    return PointConfiguration(points=pts, window=window)
