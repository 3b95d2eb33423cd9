"""Pytest configuration, fixtures and brute-force oracles for twoway-subsample tests."""

import math
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
import pytest

from twoway_subsample.panel import PanelData, write_panel_csv


@pytest.fixture
def rng() -> np.random.Generator:
    """A seeded generator so every test draws the same numbers."""
    return np.random.default_rng(20240917)


@pytest.fixture
def small_panel(rng: np.random.Generator) -> PanelData:
    """A 6 x 6 scalar panel of standard normals."""
    return PanelData.from_array(rng.standard_normal((6, 6)))


@pytest.fixture
def regression_csv(tmp_path: Path, rng: np.random.Generator) -> Path:
    """A 12 x 12 panel with columns y, x where y = 1 + 2x + noise."""
    x = rng.standard_normal((12, 12)) + rng.standard_normal((12, 1)) + rng.standard_normal(12)
    y = 1.0 + 2.0 * x + rng.standard_normal((12, 12))
    panel = PanelData.from_array(np.stack([y, x], axis=2), variables=["y", "x"])
    path = tmp_path / "regression.csv"
    write_panel_csv(panel, path)
    return path


@pytest.fixture
def write_csv(tmp_path: Path) -> Callable[[str, str], Path]:
    """Return a helper that writes raw CSV text to a temp file."""

    def _write(name: str, content: str) -> Path:
        path = tmp_path / name
        path.write_text(content, encoding="utf-8")
        return path

    return _write


def brute_force_subsample_stats(
    values: np.ndarray,
    blocks: Sequence[Sequence[int]],
    l: int,  # noqa: E741
    statistic: Callable[[np.ndarray], np.ndarray],
) -> list[np.ndarray]:
    """Evaluate `statistic` on every (block, window) sub-panel with explicit loops."""
    n_periods = values.shape[1]
    results = []
    for block in blocks:
        for start in range(n_periods - l + 1):
            sub = np.empty((len(block), l, values.shape[2]))
            for row, unit in enumerate(block):
                for offset in range(l):
                    sub[row, offset, :] = values[unit, start + offset, :]
            results.append(np.atleast_1d(statistic(sub)))
    return results


def naive_autocov(x: np.ndarray, k: int) -> float:
    """R_b(k) as the literal double sum over n != m."""
    n_units, n_periods = x.shape
    total = 0.0
    for n in range(n_units):
        for m in range(n_units):
            if n == m:
                continue
            for t in range(n_periods - k):
                total += x[n, t] * x[m, t + k]
    return total / (n_units * (n_units - 1) * n_periods)


def straight_line_l_opt(r: Sequence[float], n_periods: int, n_iterations: int = 20) -> int:
    """The plug-in iteration written with plain loops, independent of the package."""

    def split_cosine(x: float) -> float:
        x = abs(x)
        if x < 0.8:
            return 1.0
        if x <= 1.0:
            return (1.0 + math.cos(math.pi * (5.0 * x - 4.0))) / 2.0
        return 0.0

    def tukey_hanning(x: float) -> float:
        x = abs(x)
        return (1.0 + math.cos(math.pi * x)) / 2.0 if x <= 1.0 else 0.0

    def autocov(k: int) -> float:
        return r[abs(k)]

    lags = range(-(len(r) - 1), len(r))
    stretch = n_periods ** (4.0 / 21.0)
    w = 1.0 / n_periods
    numerator = sum(autocov(k) ** 2 for k in lags)
    for _ in range(n_iterations):
        denominator = 6.0 * sum(
            split_cosine(k * w * stretch) ** 2 * k**2 * autocov(k) ** 2 for k in lags
        )
        w = (numerator / denominator) ** (1.0 / 3.0) * n_periods ** (-1.0 / 3.0)
    level = sum(tukey_hanning(k * w * stretch) * autocov(k) for k in lags)
    slope = sum(split_cosine(k * w * stretch) * abs(k) * autocov(k) for k in lags)
    w_opt = (2.0 * level**2 / (3.0 * slope**2)) ** (1.0 / 3.0) * n_periods ** (-1.0 / 3.0)
    return max(1, round(1.0 / w_opt))
