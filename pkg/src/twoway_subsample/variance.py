"""Subsampling variance estimator, its bias correction and normal intervals."""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy import stats as scipy_stats

from .models import (
    ConfidenceInterval,
    DegenerateCorrection,
    EmptyStatistics,
    FloatArray,
    InvalidLevel,
    NegativeVariance,
    VarianceEstimate,
)
from .subsample import SubsampleStatistics

logger = logging.getLogger(__name__)


def subsample_covariance(stats: SubsampleStatistics) -> FloatArray:
    """(tau_bl**2 / M) * sum (theta_{b,l,i,k} - theta_bar)(...)'."""
    if stats.count == 0:
        raise EmptyStatistics("no subsample statistics")
    flat = stats.flat()
    centered = flat - flat.mean(axis=0)
    matrix: FloatArray = stats.plan.tau_sub**2 * (centered.T @ centered) / stats.count
    return (matrix + matrix.T) / 2


def sigma_hat(stats: SubsampleStatistics) -> VarianceEstimate:
    """Estimate V = lim Var(tau_NT * theta_NT); divide by tau_NT**2 for Var(theta_NT)."""
    return VarianceEstimate(matrix=subsample_covariance(stats), plan=stats.plan)


def correction_factor(l: int, l_small: int) -> float:  # noqa: E741
    """D = l_small / (l - l_small)."""
    if l_small >= l:
        raise DegenerateCorrection(f"l_small={l_small} must be smaller than l={l}")
    return l_small / (l - l_small)


def sigma_hat_bc(stats: SubsampleStatistics, small_stats: SubsampleStatistics) -> VarianceEstimate:
    """sigma2 - D * (sigma2_small - sigma2), applied entrywise.

    The small blocks must be strictly smaller, b_small < b, except that b = 1
    admits b_small = 1. The result may fail to be PSD; it is flagged
    `corrected=True`.
    """
    plan, small_plan = stats.plan, small_stats.plan
    if small_plan.b >= plan.b and not small_plan.b == plan.b == 1:
        raise DegenerateCorrection(f"b_small={small_plan.b} must be smaller than b={plan.b}")
    if (small_stats.n_units, small_stats.n_periods) != (stats.n_units, stats.n_periods):
        raise DegenerateCorrection("small subsamples must come from the same panel")
    factor = correction_factor(plan.l, small_plan.l)

    full = subsample_covariance(stats)
    small = subsample_covariance(small_stats)
    bias = small - full
    return VarianceEstimate(
        matrix=full - factor * bias,
        plan=plan,
        corrected=True,
        small_plan=small_plan,
        correction_factor=factor,
        bias_estimate=bias,
    )


def critical_value(level: float) -> float:
    """Two-sided standard normal critical value z_{1 - alpha/2}."""
    if not 0 < level < 1:
        raise InvalidLevel(f"level={level} must lie in (0, 1)")
    return float(scipy_stats.norm.ppf(0.5 + level / 2))


def normal_ci(
    estimate: float | FloatArray,
    variance: VarianceEstimate,
    tau_full: float,
    level: float = 0.95,
    coordinate: int = 0,
    clip: bool = True,
) -> ConfidenceInterval:
    """theta_NT +- z * sqrt(sigma2) / tau_NT for one coordinate.

    Negative (bias-corrected) variances are clipped to zero and flagged, or
    raise NegativeVariance when `clip` is False.
    """
    z = critical_value(level)
    point = np.atleast_1d(np.asarray(estimate, dtype=np.float64))
    center = float(point[coordinate] if point.size > 1 else point[0])
    value = variance.entry(coordinate)
    clipped = False
    if value < 0:
        if not clip:
            raise NegativeVariance(f"variance {value:.6g} is negative for coordinate {coordinate}")
        logger.warning("Clipping negative variance %.6g to 0 (coordinate %d)", value, coordinate)
        value, clipped = 0.0, True
    half_width = z * math.sqrt(value) / tau_full
    return ConfidenceInterval(
        estimate=center,
        lower=center - half_width,
        upper=center + half_width,
        level=level,
        clipped=clipped,
    )
