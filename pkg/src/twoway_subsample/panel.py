"""Balanced panel data model and long-format CSV ingestion."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, model_validator

from .models import FloatArray, SubsampleError

Row = tuple[int, int, "float | Sequence[float]"]

UNIT_COLUMN = "unit"
TIME_COLUMN = "time"


class PanelError(SubsampleError):
    """Raised when raw rows cannot form a balanced, finite panel.

    `row` is the 0-based data row; `source` and `line` are filled in when the
    rows came from a file.
    """

    def __init__(
        self,
        message: str,
        row: int | None = None,
        source: str | None = None,
        line: int | None = None,
    ) -> None:
        self.message = message
        self.row = row
        self.source = source
        self.line = line
        super().__init__(str(self))

    def __str__(self) -> str:
        if self.source and self.line:
            return f"{self.source}:{self.line}: {self.message}"
        if self.source:
            return f"{self.source}: {self.message}"
        return self.message

    def with_source(self, source: str, header_lines: int = 1) -> PanelError:
        """Copy of this error located in `source` (line = row + header + 1)."""
        line = self.row + header_lines + 1 if self.row is not None else None
        clone = type(self).__new__(type(self))
        PanelError.__init__(clone, self.message, self.row, source, line)
        return clone


class MissingCell(PanelError):
    """Raised when some (unit, time) cell has no row."""

    pass


class DuplicateCell(PanelError):
    """Raised when a (unit, time) cell appears more than once."""

    pass


class NonFiniteValue(PanelError):
    """Raised when a value is NaN or infinite."""

    pass


class PanelData(BaseModel):
    """A balanced N x T panel of d-dimensional observations.

    `values` has shape (N, T, d); labels keep the original unit and time
    identifiers in the order of the internal 0-based indices.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: FloatArray
    unit_labels: tuple[int, ...] = ()
    period_labels: tuple[int, ...] = ()
    variables: tuple[str, ...] = ()

    @model_validator(mode="after")
    def validate_values(self) -> PanelData:
        values = self.values
        if values.ndim != 3:
            raise ValueError(f"panel values must have shape (N, T, d), got {values.shape}")
        n_units, n_periods, dim = values.shape
        if n_units < 1 or n_periods < 1 or dim < 1:
            raise ValueError(f"panel dimensions must be positive, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("panel values must be finite")
        if self.unit_labels and len(self.unit_labels) != n_units:
            raise ValueError("unit_labels length does not match N")
        if self.period_labels and len(self.period_labels) != n_periods:
            raise ValueError("period_labels length does not match T")
        if self.variables and len(self.variables) != dim:
            raise ValueError("variables length does not match d")
        values.setflags(write=False)
        return self

    @classmethod
    def from_array(
        cls,
        values: FloatArray | Sequence[Sequence[float]],
        variables: Sequence[str] | None = None,
    ) -> PanelData:
        """Wrap an (N, T) or (N, T, d) array with default labels."""
        array = np.array(values, dtype=np.float64)
        if array.ndim == 2:
            array = array[:, :, np.newaxis]
        n_units, n_periods, dim = array.shape
        return cls(
            values=array,
            unit_labels=tuple(range(1, n_units + 1)),
            period_labels=tuple(range(1, n_periods + 1)),
            variables=tuple(variables) if variables else tuple(f"v{j + 1}" for j in range(dim)),
        )

    @property
    def n_units(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_periods(self) -> int:
        return int(self.values.shape[1])

    @property
    def dim(self) -> int:
        return int(self.values.shape[2])

    def column(self, coordinate: int) -> FloatArray:
        """The N x T array of one coordinate."""
        result: FloatArray = self.values[:, :, coordinate]
        return result

    def select(self, coordinates: Sequence[int]) -> PanelData:
        """Panel restricted to the given coordinates."""
        names = self.variables or tuple(f"v{j + 1}" for j in range(self.dim))
        return PanelData(
            values=np.array(self.values[:, :, list(coordinates)]),
            unit_labels=self.unit_labels,
            period_labels=self.period_labels,
            variables=tuple(names[j] for j in coordinates),
        )

    def transformed(self, scale: float = 1.0, shift: float = 0.0) -> PanelData:
        """Panel with every entry mapped to scale * x + shift."""
        return self.model_copy(update={"values": np.array(self.values * scale + shift)})

    def to_rows(self) -> pd.DataFrame:
        """Export as a long-format frame with columns unit, time, v1..vd."""
        units = self.unit_labels or tuple(range(1, self.n_units + 1))
        periods = self.period_labels or tuple(range(1, self.n_periods + 1))
        names = self.variables or tuple(f"v{j + 1}" for j in range(self.dim))
        unit_col = np.repeat(np.asarray(units), self.n_periods)
        time_col = np.tile(np.asarray(periods), self.n_units)
        frame = pd.DataFrame({UNIT_COLUMN: unit_col, TIME_COLUMN: time_col})
        flat = self.values.reshape(self.n_units * self.n_periods, self.dim)
        for j, name in enumerate(names):
            frame[name] = flat[:, j]
        return frame


def _rows_to_frame(rows: Iterable[Row]) -> pd.DataFrame:
    records = []
    for unit, time, value in rows:
        vector = [value] if isinstance(value, (int, float)) else list(value)
        records.append([unit, time, *vector])
    if not records:
        raise PanelError("panel has no rows")
    width = len(records[0])
    for row, record in enumerate(records):
        if len(record) != width:
            raise PanelError(f"row has {len(record) - 2} values, expected {width - 2}", row=row)
    columns = [UNIT_COLUMN, TIME_COLUMN, *(f"v{j + 1}" for j in range(width - 2))]
    return pd.DataFrame.from_records(records, columns=columns)


def _integer_labels(column: pd.Series, name: str) -> NDArray[np.int64]:
    numeric = pd.to_numeric(column, errors="coerce")
    bad = numeric.isna() | (numeric != np.floor(numeric))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise PanelError(f"{name} label {column.iloc[row]!r} is not an integer", row=row)
    return numeric.to_numpy().astype(np.int64)


def validate_panel(raw: pd.DataFrame | Iterable[Row]) -> PanelData:
    """Build a balanced PanelData from (unit, time, values...) rows.

    Accepts a frame with columns unit, time and one column per coordinate, or
    an iterable of (unit, time, value-or-vector) tuples. Units and periods are
    relabeled to contiguous indices in ascending label order.
    """
    frame = raw if isinstance(raw, pd.DataFrame) else _rows_to_frame(raw)
    missing_columns = {UNIT_COLUMN, TIME_COLUMN} - set(frame.columns)
    if missing_columns:
        raise PanelError(f"missing required columns: {sorted(missing_columns)}")
    value_columns = [c for c in frame.columns if c not in (UNIT_COLUMN, TIME_COLUMN)]
    if not value_columns:
        raise PanelError("panel needs at least one value column")
    if frame.empty:
        raise PanelError("panel has no rows")

    units = _integer_labels(frame[UNIT_COLUMN], UNIT_COLUMN)
    times = _integer_labels(frame[TIME_COLUMN], TIME_COLUMN)
    try:
        data = frame[value_columns].apply(pd.to_numeric, errors="raise").to_numpy(np.float64)
    except (ValueError, TypeError) as e:
        raise PanelError(f"value columns must be numeric: {e}") from e

    non_finite = ~np.isfinite(data)
    if non_finite.any():
        row = int(np.flatnonzero(non_finite.any(axis=1))[0])
        raise NonFiniteValue(
            f"non-finite value at unit {units[row]}, time {times[row]}", row=row
        )

    unit_labels, unit_index = np.unique(units, return_inverse=True)
    period_labels, period_index = np.unique(times, return_inverse=True)
    n_units, n_periods = len(unit_labels), len(period_labels)

    cell = unit_index * n_periods + period_index
    seen = np.full(n_units * n_periods, -1, dtype=np.int64)
    for row, key in enumerate(cell):
        if seen[key] >= 0:
            raise DuplicateCell(
                f"duplicate cell unit {units[row]}, time {times[row]} "
                f"(first seen at data row {seen[key] + 1})",
                row=row,
            )
        seen[key] = row
    if (seen < 0).any():
        key = int(np.flatnonzero(seen < 0)[0])
        unit, period = unit_labels[key // n_periods], period_labels[key % n_periods]
        raise MissingCell(f"missing cell unit {unit}, time {period}")

    values = np.empty((n_units, n_periods, len(value_columns)), dtype=np.float64)
    values[unit_index, period_index, :] = data
    return PanelData(
        values=values,
        unit_labels=tuple(int(u) for u in unit_labels),
        period_labels=tuple(int(t) for t in period_labels),
        variables=tuple(str(c) for c in value_columns),
    )


def load_panel_csv(path: Path) -> PanelData:
    """Read a long-format CSV (header unit,time,v1[,v2,...]) into a panel."""
    try:
        frame = pd.read_csv(
            path, encoding="utf-8", skipinitialspace=True, float_precision="round_trip"
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise PanelError(f"cannot parse CSV: {e}", source=str(path)) from e
    try:
        return validate_panel(frame)
    except PanelError as e:
        raise e.with_source(str(path)) from e


def write_panel_csv(panel: PanelData, path: Path) -> None:
    """Write a panel in the long format accepted by load_panel_csv."""
    panel.to_rows().to_csv(path, index=False, float_format="%.17g")
