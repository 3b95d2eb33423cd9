"""Unit partitions, time windows and evaluation of statistics on every subsample."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Protocol, runtime_checkable

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .models import (
    FloatArray,
    InvalidBlockSize,
    InvalidWindowLength,
    SeedStream,
    StatisticFailure,
    SubsamplePlan,
)
from .panel import PanelData

logger = logging.getLogger(__name__)


@runtime_checkable
class PanelStatistic(Protocol):
    """Maps an (m, s, d) sub-panel array to a finite vector.

    Implementations must be reentrant: the engine may call them from several
    threads at once.
    """

    def __call__(self, values: FloatArray) -> FloatArray: ...


class MomentStatistic(ABC):
    """A statistic g(mean of h(X)) over the cells of a (sub-)panel.

    The engine evaluates these for all subsamples at once from block and
    window sums of the per-cell moments h(X_nt).
    """

    @abstractmethod
    def moments(self, values: FloatArray) -> FloatArray:
        """Per-cell moments, shape (m, s, k)."""

    @abstractmethod
    def finalize(self, mean_moments: FloatArray) -> FloatArray:
        """Map moment means of shape (..., k) to statistics of shape (..., d)."""

    def __call__(self, values: FloatArray) -> FloatArray:
        return self.finalize(self.moments(values).mean(axis=(0, 1)))


class MeanStatistic(MomentStatistic):
    """The coordinate-wise sample mean."""

    def moments(self, values: FloatArray) -> FloatArray:
        return values

    def finalize(self, mean_moments: FloatArray) -> FloatArray:
        return mean_moments


class UnitPartition(BaseModel):
    """Disjoint blocks of 0-based unit indices covering 0..N-1."""

    model_config = ConfigDict(frozen=True)

    blocks: tuple[tuple[int, ...], ...]
    block_size: int

    @model_validator(mode="after")
    def validate_blocks(self) -> UnitPartition:
        members = [unit for block in self.blocks for unit in block]
        if sorted(members) != list(range(len(members))):
            raise ValueError("blocks must be disjoint and cover 0..N-1")
        for block in self.blocks[:-1]:
            if len(block) != self.block_size:
                raise ValueError("all blocks but the last must have size block_size")
        if self.blocks and not 1 <= len(self.blocks[-1]) <= self.block_size:
            raise ValueError("last block size must lie in 1..block_size")
        return self

    @property
    def n_units(self) -> int:
        return sum(len(block) for block in self.blocks)

    @property
    def sizes(self) -> list[int]:
        return [len(block) for block in self.blocks]

    def has_remainder(self) -> bool:
        return self.n_units % self.block_size != 0


class SubsampleStatistics(BaseModel):
    """Statistic values theta_{b,l,i,k} with shape (N_b, q, d)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: FloatArray
    plan: SubsamplePlan
    n_units: int
    n_periods: int
    block_sizes: tuple[int, ...]

    @model_validator(mode="after")
    def validate_values(self) -> SubsampleStatistics:
        if self.values.ndim != 3:
            raise ValueError(f"values must have shape (N_b, q, d), got {self.values.shape}")
        expected = (self.plan.n_blocks(self.n_units), self.plan.n_windows(self.n_periods))
        if self.values.shape[:2] != expected:
            raise ValueError(f"expected {expected} subsamples, got {self.values.shape[:2]}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("subsample statistics must be finite")
        self.values.setflags(write=False)
        return self

    @property
    def count(self) -> int:
        """M, the number of subsamples."""
        return int(self.values.shape[0] * self.values.shape[1])

    @property
    def dim(self) -> int:
        return int(self.values.shape[2])

    def flat(self) -> FloatArray:
        """Values as an (M, d) array, block-major."""
        result: FloatArray = self.values.reshape(self.count, self.dim)
        return result


def partition_units(n_units: int, b: int, seed: SeedStream) -> UnitPartition:
    """Shuffle 0..N-1 with the seeded stream and slice into chunks of b."""
    if not 1 <= b <= n_units:
        raise InvalidBlockSize(f"b={b} must lie in 1..{n_units}")
    order = seed.generator().permutation(n_units)
    blocks = tuple(
        tuple(int(unit) for unit in order[start : start + b]) for start in range(0, n_units, b)
    )
    return UnitPartition(blocks=blocks, block_size=b)


def time_windows(n_periods: int, l: int) -> list[tuple[int, int]]:  # noqa: E741
    """All q = T - l + 1 consecutive windows as 1-based (start, end) pairs."""
    if not 1 <= l <= n_periods:
        raise InvalidWindowLength(f"l={l} must lie in 1..{n_periods}")
    return [(k, k + l - 1) for k in range(1, n_periods - l + 2)]


def _windowed_block_means(
    moments: FloatArray, blocks: Sequence[Sequence[int]], l: int  # noqa: E741
) -> FloatArray:
    """Mean of moments over every (block, window) pair, shape (N_b, q, k)."""
    center = moments.mean(axis=(0, 1))
    centered = moments - center
    block_sums = np.stack([centered[list(block)].sum(axis=0) for block in blocks])
    cumulative = np.concatenate(
        [np.zeros((len(blocks), 1, moments.shape[2])), np.cumsum(block_sums, axis=1)], axis=1
    )
    window_sums = cumulative[:, l:, :] - cumulative[:, :-l, :]
    sizes = np.array([len(block) for block in blocks], dtype=np.float64)
    result: FloatArray = window_sums / (sizes[:, None, None] * l) + center
    return result


def _evaluate_moment_statistic(
    values: FloatArray,
    blocks: Sequence[Sequence[int]],
    l: int,  # noqa: E741
    statistic: MomentStatistic,
) -> FloatArray:
    means = _windowed_block_means(statistic.moments(values), blocks, l)
    try:
        with np.errstate(all="ignore"):
            result = statistic.finalize(means)
    except np.linalg.LinAlgError:
        # Locate the first offending cell for the error report.
        for i in range(means.shape[0]):
            for k in range(means.shape[1]):
                try:
                    statistic.finalize(means[i, k])
                except np.linalg.LinAlgError as e:
                    raise StatisticFailure(i + 1, k + 1, str(e)) from e
        raise
    return np.asarray(result, dtype=np.float64)


def _evaluate_generic_statistic(
    values: FloatArray,
    blocks: Sequence[Sequence[int]],
    l: int,  # noqa: E741
    statistic: PanelStatistic,
    max_workers: int | None,
) -> FloatArray:
    n_windows = values.shape[1] - l + 1
    block_panels = [values[list(block)] for block in blocks]
    cells = [(i, k) for i in range(len(blocks)) for k in range(n_windows)]

    def evaluate(cell: tuple[int, int]) -> FloatArray:
        i, k = cell
        try:
            output = statistic(block_panels[i][:, k : k + l, :])
        except (ArithmeticError, np.linalg.LinAlgError, ValueError) as e:
            raise StatisticFailure(i + 1, k + 1, str(e)) from e
        return np.atleast_1d(np.asarray(output, dtype=np.float64))

    # Each cell writes its own slot, so the schedule cannot change the result.
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outputs = list(pool.map(evaluate, cells))
    else:
        outputs = [evaluate(cell) for cell in cells]
    return np.stack(outputs).reshape(len(blocks), n_windows, -1)


def evaluate_subsamples(
    panel: PanelData,
    plan: SubsamplePlan,
    statistic: PanelStatistic,
    partition: UnitPartition | None = None,
    max_workers: int | None = None,
) -> SubsampleStatistics:
    """Apply `statistic` to every unit-block x time-window sub-panel.

    The partition is drawn from `plan.partition_seed` unless given. The
    remainder block is evaluated on its true size, or dropped when the plan
    excludes it.
    """
    plan.validate_for(panel.n_units, panel.n_periods)
    if partition is None:
        seed = SeedStream(master_seed=plan.partition_seed)
        partition = partition_units(panel.n_units, plan.b, seed)
    elif partition.n_units != panel.n_units or partition.block_size != plan.b:
        raise InvalidBlockSize(
            f"partition of {partition.n_units} units in blocks of {partition.block_size} "
            f"does not match panel N={panel.n_units}, b={plan.b}"
        )

    blocks: Sequence[Sequence[int]] = partition.blocks
    if not plan.include_remainder_block and partition.has_remainder():
        logger.debug("Dropping remainder block of size %d", len(blocks[-1]))
        blocks = blocks[:-1]

    if isinstance(statistic, MomentStatistic):
        values = _evaluate_moment_statistic(panel.values, blocks, plan.l, statistic)
    else:
        values = _evaluate_generic_statistic(panel.values, blocks, plan.l, statistic, max_workers)

    if not np.all(np.isfinite(values)):
        i, k = (int(x) for x in np.argwhere(~np.isfinite(values))[0][:2])
        raise StatisticFailure(i + 1, k + 1, "non-finite value")

    return SubsampleStatistics(
        values=values,
        plan=plan,
        n_units=panel.n_units,
        n_periods=panel.n_periods,
        block_sizes=tuple(len(block) for block in blocks),
    )
