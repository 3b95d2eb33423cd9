"""Shared data models for subsampling inference using Pydantic."""

from __future__ import annotations

import math
from enum import Enum
from fractions import Fraction
from typing import Any

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

FloatArray = NDArray[np.float64]

MAX_SEED = 2**64 - 1


class SubsampleError(Exception):
    """Base class for every error raised by the library."""

    pass


class InvalidBlockSize(SubsampleError, ValueError):
    """Raised when a unit-block size b is outside 1..N."""

    pass


class InvalidWindowLength(SubsampleError, ValueError):
    """Raised when a time-window length l is outside 1..T."""

    pass


class StatisticFailure(SubsampleError):
    """Raised when a statistic produced a non-finite value on a subsample."""

    def __init__(self, block: int, start: int, message: str = "") -> None:
        self.block = block
        self.start = start
        detail = f": {message}" if message else ""
        super().__init__(f"Statistic failed on block {block}, window start {start}{detail}")


class EmptyStatistics(SubsampleError):
    """Raised when there are no subsample statistics to summarize."""

    pass


class InvalidProbability(SubsampleError, ValueError):
    """Raised when a quantile probability is outside (0, 1)."""

    pass


class InvalidLevel(SubsampleError, ValueError):
    """Raised when a confidence level is outside (0, 1)."""

    pass


class DegenerateCorrection(SubsampleError):
    """Raised when the bias correction would divide by l - l_small <= 0."""

    pass


class NegativeVariance(SubsampleError):
    """Raised when a negative variance reaches a CI with clipping disabled."""

    pass


class SingleUnit(SubsampleError):
    """Raised when cross-unit autocovariances are requested with N < 2."""

    pass


class SingularDesign(SubsampleError):
    """Raised when the regressor moment matrix cannot be inverted."""

    pass


class MissingTrueErrors(SubsampleError):
    """Raised when infeasible scores are requested without true errors."""

    pass


class ZeroVariance(SubsampleError):
    """Raised when a t-statistic is requested with a non-positive variance."""

    pass


class InvalidRho(SubsampleError, ValueError):
    """Raised when an AR(1) coefficient is outside (-1, 1)."""

    pass


class IntervalSide(str, Enum):
    """Which endpoints of a confidence interval are finite."""

    ONE_SIDED_LOWER = "one_sided_lower"
    ONE_SIDED_UPPER = "one_sided_upper"
    TWO_SIDED_EQUAL_TAIL = "two_sided_equal_tail"


def _parse_exponent(value: Any) -> Any:
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    return value


class RateSpec(BaseModel):
    """Normalizing rate tau(m, s) = m**p * s**q."""

    model_config = ConfigDict(frozen=True)

    unit_exponent: float = 0.5
    period_exponent: float = 0.0

    @model_validator(mode="before")
    @classmethod
    def parse_fractions(cls, data: Any) -> Any:
        """Accept '1/2' style exponents."""
        if isinstance(data, dict):
            return {key: _parse_exponent(value) for key, value in data.items()}
        return data

    @model_validator(mode="after")
    def validate_exponents(self) -> RateSpec:
        if self.unit_exponent < 0 or self.period_exponent < 0:
            raise ValueError("rate exponents must be non-negative")
        if self.unit_exponent + self.period_exponent <= 0:
            raise ValueError("rate exponents must not both be zero")
        return self

    @classmethod
    def root_units(cls) -> RateSpec:
        """sqrt(N): the mean and regression rate."""
        return cls(unit_exponent=0.5, period_exponent=0.0)

    @classmethod
    def root_cells(cls) -> RateSpec:
        """sqrt(NT): the degenerate product-of-normals rate."""
        return cls(unit_exponent=0.5, period_exponent=0.5)

    def tau(self, units: int | float, periods: int | float) -> float:
        """Evaluate the rate at m units and s periods."""
        return float(units) ** self.unit_exponent * float(periods) ** self.period_exponent

    def __str__(self) -> str:
        return f"m^{self.unit_exponent:g}*s^{self.period_exponent:g}"


class SubsamplePlan(BaseModel):
    """Subsample sizes, rate and partition seed for one inference call."""

    model_config = ConfigDict(frozen=True)

    b: int = Field(ge=1)
    l: int = Field(ge=1)  # noqa: E741
    rate: RateSpec = Field(default_factory=RateSpec.root_units)
    partition_seed: int = Field(default=0, ge=0, le=MAX_SEED)
    include_remainder_block: bool = True

    def validate_for(self, n_units: int, n_periods: int) -> None:
        """Raise if the plan cannot be applied to an N x T panel."""
        if not 1 <= self.b <= n_units:
            raise InvalidBlockSize(f"b={self.b} must lie in 1..{n_units}")
        if not 1 <= self.l <= n_periods:
            raise InvalidWindowLength(f"l={self.l} must lie in 1..{n_periods}")

    def n_blocks(self, n_units: int) -> int:
        """N_b, after remainder exclusion if requested."""
        full = math.ceil(n_units / self.b)
        if not self.include_remainder_block and n_units % self.b != 0:
            return full - 1
        return full

    def n_windows(self, n_periods: int) -> int:
        """q = T - l + 1."""
        return n_periods - self.l + 1

    def n_subsamples(self, n_units: int, n_periods: int) -> int:
        """M = N_b * q."""
        return self.n_blocks(n_units) * self.n_windows(n_periods)

    @property
    def tau_sub(self) -> float:
        """tau_bl = rate(b, l)."""
        return self.rate.tau(self.b, self.l)

    def smaller(self, b: int | None = None, l: int | None = None) -> SubsamplePlan:  # noqa: E741
        """Plan with (floor(sqrt(b)), floor(sqrt(l))) sizes unless given."""
        small_b = b if b is not None else max(1, math.isqrt(self.b))
        small_l = l if l is not None else max(1, math.isqrt(self.l))
        return self.model_copy(update={"b": small_b, "l": small_l})

    def with_rate(self, rate: RateSpec) -> SubsamplePlan:
        return self.model_copy(update={"rate": rate})


class SeedStream(BaseModel):
    """One independent pseudo-random stream derived from a master seed.

    Streams with the same master seed and different indices are independent;
    the same pair always reproduces the same draws.
    """

    model_config = ConfigDict(frozen=True)

    master_seed: int = Field(ge=0, le=MAX_SEED)
    stream_index: int = Field(default=0, ge=0)

    def sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index,))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.PCG64(self.sequence()))

    def spawn_generators(self, count: int) -> list[np.random.Generator]:
        """Independent child generators, stable for a given count."""
        return [np.random.Generator(np.random.PCG64(s)) for s in self.sequence().spawn(count)]

    def derive_seed(self, child: int = 0) -> int:
        """A 64-bit integer seed for child stream `child`."""
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index, child))
        return int(seq.generate_state(1, dtype=np.uint64)[0])


class ConfidenceInterval(BaseModel):
    """A confidence interval; one-sided intervals carry an infinite endpoint."""

    model_config = ConfigDict(frozen=True)

    estimate: float
    lower: float
    upper: float
    level: float
    side: IntervalSide = IntervalSide.TWO_SIDED_EQUAL_TAIL
    clipped: bool = False

    @model_validator(mode="after")
    def validate_interval(self) -> ConfidenceInterval:
        if not 0 < self.level < 1:
            raise ValueError(f"level ({self.level}) must lie in (0, 1)")
        if self.lower > self.upper:
            raise ValueError(f"lower ({self.lower}) must be <= upper ({self.upper})")
        return self

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def bound_or_none(self) -> tuple[float | None, float | None]:
        """Endpoints with infinities mapped to None for JSON output."""
        lower = self.lower if math.isfinite(self.lower) else None
        upper = self.upper if math.isfinite(self.upper) else None
        return lower, upper


class VarianceEstimate(BaseModel):
    """A subsampling estimate of V = lim Var(tau_NT * theta_hat).

    `matrix` is always d x d; `value` gives the scalar for d == 1.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: FloatArray
    plan: SubsamplePlan
    corrected: bool = False
    small_plan: SubsamplePlan | None = None
    correction_factor: float | None = None
    bias_estimate: FloatArray | None = None

    @model_validator(mode="after")
    def validate_matrix(self) -> VarianceEstimate:
        matrix = self.matrix
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"variance matrix must be square, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("variance matrix has non-finite entries")
        scale = max(float(np.max(np.abs(matrix))), 1.0)
        if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12 * scale):
            raise ValueError("variance matrix must be symmetric")
        if not self.corrected:
            smallest = float(np.min(np.linalg.eigvalsh(matrix)))
            if smallest < -1e-9 * scale:
                raise ValueError(f"uncorrected variance must be PSD (min eigenvalue {smallest})")
        matrix.setflags(write=False)
        return self

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def value(self) -> float:
        """Scalar estimate; only defined for one-dimensional statistics."""
        if self.dim != 1:
            raise ValueError("value is only defined for scalar statistics; use matrix")
        return float(self.matrix[0, 0])

    def entry(self, coordinate: int) -> float:
        return float(self.matrix[coordinate, coordinate])

    def estimator_variance(self, tau_full: float) -> FloatArray:
        """Var(theta_hat_NT) estimate: matrix / tau_NT**2."""
        result: FloatArray = self.matrix / tau_full**2
        return result
