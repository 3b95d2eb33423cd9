"""Subsampling root distribution and quantile confidence intervals."""

from __future__ import annotations

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .models import (
    ConfidenceInterval,
    EmptyStatistics,
    FloatArray,
    IntervalSide,
    InvalidLevel,
    InvalidProbability,
)
from .subsample import SubsampleStatistics


class RootDistribution(BaseModel):
    """Sorted roots tau_bl * (theta_{b,l,i,k} - theta_NT) for one coordinate.

    The CDF is the step function L(x) = #{roots <= x} / M. Continuity of the
    limiting distribution at the requested quantiles is assumed, not checked.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    roots: FloatArray
    tau_full: float
    tau_sub: float
    center: float

    @model_validator(mode="after")
    def validate_roots(self) -> RootDistribution:
        if self.roots.ndim != 1 or self.roots.size == 0:
            raise ValueError("roots must be a non-empty vector")
        if np.any(np.diff(self.roots) < 0):
            raise ValueError("roots must be sorted ascending")
        self.roots.setflags(write=False)
        return self

    @property
    def count(self) -> int:
        return int(self.roots.size)

    def cdf(self, x: float | FloatArray) -> float | FloatArray:
        """L(x); vectorized over x."""
        hits = np.searchsorted(self.roots, x, side="right")
        if np.ndim(hits) == 0:
            return float(hits) / self.count
        result: FloatArray = np.asarray(hits, dtype=np.float64) / self.count
        return result


def build_root_distribution(
    stats: SubsampleStatistics,
    full_estimate: float | FloatArray,
    coordinate: int = 0,
) -> RootDistribution:
    """Center subsample statistics at the full-sample estimate and scale by tau_bl."""
    if stats.count == 0:
        raise EmptyStatistics("no subsample statistics")
    estimate = np.atleast_1d(np.asarray(full_estimate, dtype=np.float64))
    center = float(estimate[coordinate] if estimate.size > 1 else estimate[0])
    plan = stats.plan
    roots = plan.tau_sub * (stats.flat()[:, coordinate] - center)
    return RootDistribution(
        roots=np.sort(roots),
        tau_full=plan.rate.tau(stats.n_units, stats.n_periods),
        tau_sub=plan.tau_sub,
        center=center,
    )


def subsample_quantile(dist: RootDistribution, p: float) -> float:
    """inf{x : L(x) >= p}, the ceil(p*M)-th smallest root."""
    if not 0 < p < 1:
        raise InvalidProbability(f"p={p} must lie in (0, 1)")
    m = dist.count
    rank = math.ceil(p * m)
    # Undo floating error such as 0.7 * 10 = 7.000000000000001.
    if rank > 1 and (rank - 1) / m >= p:
        rank -= 1
    rank = min(max(rank, 1), m)
    return float(dist.roots[rank - 1])


def quantile_ci(
    dist: RootDistribution,
    level: float = 0.95,
    side: IntervalSide | str = IntervalSide.TWO_SIDED_EQUAL_TAIL,
) -> ConfidenceInterval:
    """Subsampling interval; endpoints swap quantiles like a percentile-t interval."""
    if not 0 < level < 1:
        raise InvalidLevel(f"level={level} must lie in (0, 1)")
    side = IntervalSide(side)
    alpha = 1.0 - level
    estimate, tau = dist.center, dist.tau_full

    if side == IntervalSide.ONE_SIDED_LOWER:
        lower = estimate - subsample_quantile(dist, level) / tau
        upper = math.inf
    elif side == IntervalSide.ONE_SIDED_UPPER:
        lower = -math.inf
        upper = estimate - subsample_quantile(dist, alpha) / tau
    else:
        lower = estimate - subsample_quantile(dist, 1.0 - alpha / 2) / tau
        upper = estimate - subsample_quantile(dist, alpha / 2) / tau

    return ConfidenceInterval(estimate=estimate, lower=lower, upper=upper, level=level, side=side)
