"""Time-effect autocovariances and iterative plug-in selection of (b, l)."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .models import FloatArray, SingleUnit
from .panel import PanelData

logger = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 20
MIN_ITERATIONS = 4
DEFAULT_L_MIN = 4
DEGENERATE_RATIO = 1e-12
# Exponent of T in the window argument of the plug-in iteration.
WINDOW_EXPONENT = 4 / 21


class Window(str, Enum):
    """Lag windows used by the plug-in iteration."""

    BARTLETT = "bartlett"
    TUKEY_HANNING = "tukey_hanning"
    SPLIT_COSINE = "split_cosine"


def window_eval(kind: Window | str, x: float | FloatArray) -> FloatArray:
    """Evaluate a lag window; vectorized, values in [0, 1]."""
    kind = Window(kind)
    ax = np.abs(np.asarray(x, dtype=np.float64))
    if kind == Window.BARTLETT:
        result = np.maximum(0.0, 1.0 - ax)
    elif kind == Window.TUKEY_HANNING:
        result = np.where(ax <= 1.0, (1.0 + np.cos(np.pi * ax)) / 2.0, 0.0)
    else:
        # Flat top on [0, 4/5), cosine taper on [4/5, 1], zero beyond.
        taper = (1.0 + np.cos(np.pi * (5.0 * ax - 4.0))) / 2.0
        result = np.where(ax < 0.8, 1.0, np.where(ax <= 1.0, taper, 0.0))
    out: FloatArray = np.asarray(result, dtype=np.float64)
    return out


class AutocovSeries(BaseModel):
    """R_b(k) estimates for k = 0..max_lag; negative lags by symmetry."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: FloatArray
    n_periods: int
    n_units: int

    @model_validator(mode="after")
    def validate_values(self) -> AutocovSeries:
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("autocovariances must be a non-empty vector")
        if self.values.size > self.n_periods:
            raise ValueError("cannot have more lags than periods")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("autocovariances must be finite")
        self.values.setflags(write=False)
        return self

    @property
    def max_lag(self) -> int:
        return int(self.values.size - 1)

    def symmetric(self) -> tuple[FloatArray, FloatArray]:
        """Lags -(K)..K and the matching R(k) with R(-k) = R(k)."""
        lags = np.arange(-self.max_lag, self.max_lag + 1, dtype=np.float64)
        values = np.concatenate([self.values[:0:-1], self.values])
        return lags, values

    def scaled(self, factor: float) -> AutocovSeries:
        return self.model_copy(update={"values": np.array(self.values * factor)})


def autocov_hat(
    panel: PanelData, max_lag: int | None = None, coordinate: int = 0, center: bool = True
) -> AutocovSeries:
    """R_b(k) = 1/(N(N-1)T) * sum_{n != m} sum_{t <= T-k} X_nt X_{m,t+k}.

    The coordinate is centered by its grand mean first unless `center` is
    False. The cross-unit sum uses (sum_n X_nt)(sum_m X_{m,t+k}) - sum_n X_nt X_{n,t+k}.
    """
    n_units, n_periods = panel.n_units, panel.n_periods
    if n_units < 2:
        raise SingleUnit("cross-unit autocovariances need N >= 2")
    if max_lag is None:
        max_lag = n_periods - 1
    if not 0 <= max_lag <= n_periods - 1:
        raise ValueError(f"max_lag={max_lag} must lie in 0..{n_periods - 1}")

    x = panel.column(coordinate)
    if center:
        x = x - x.mean()
    totals = x.sum(axis=0)
    scale = n_units * (n_units - 1) * n_periods
    values = np.empty(max_lag + 1, dtype=np.float64)
    for k in range(max_lag + 1):
        cross = float(np.dot(totals[: n_periods - k], totals[k:]))
        own = float(np.vdot(x[:, : n_periods - k], x[:, k:]))
        values[k] = (cross - own) / scale
    return AutocovSeries(values=values, n_periods=n_periods, n_units=n_units)


class SizeSelection(BaseModel):
    """Outcome of the plug-in iteration and the (b, l) it implies."""

    model_config = ConfigDict(frozen=True)

    l_opt: int = Field(ge=1)
    l: int = Field(ge=1)  # noqa: E741
    b: int = Field(ge=1)
    w_opt: float | None = None
    w_trace: tuple[float, ...] = ()
    floor_applied: bool = False
    degenerate: bool = False
    coordinate: int = 0


def _ratio(numerator: float, denominator: float) -> float | None:
    """numerator / denominator, or None when the denominator is degenerate."""
    if not math.isfinite(numerator) or not math.isfinite(denominator):
        return None
    if denominator <= DEGENERATE_RATIO * numerator or denominator <= 0:
        return None
    return numerator / denominator


def buhlmann_l_opt(autocov: AutocovSeries, n_iterations: int = DEFAULT_ITERATIONS) -> SizeSelection:
    """Iterate the flat-top plug-in for the window length and round 1/w_opt.

    A degenerate denominator anywhere in the iteration yields l_opt = 1 with
    the `degenerate` flag set.
    """
    if n_iterations < MIN_ITERATIONS:
        raise ValueError(f"n_iterations={n_iterations} must be at least {MIN_ITERATIONS}")
    n_periods = autocov.n_periods
    lags, r = autocov.symmetric()
    stretch = n_periods**WINDOW_EXPONENT
    root_t = n_periods ** (-1.0 / 3.0)
    r_squared = r**2
    energy = float(np.sum(r_squared))

    def degenerate(trace: list[float]) -> SizeSelection:
        logger.warning("Degenerate plug-in denominator; falling back to l_opt = 1")
        return SizeSelection(l_opt=1, l=1, b=1, w_trace=tuple(trace), degenerate=True)

    w = 1.0 / n_periods
    trace = [w]
    for _ in range(n_iterations):
        weights = window_eval(Window.SPLIT_COSINE, lags * w * stretch)
        curvature = 6.0 * float(np.sum(weights**2 * lags**2 * r_squared))
        ratio = _ratio(energy, curvature)
        if ratio is None:
            return degenerate(trace)
        w = ratio ** (1.0 / 3.0) * root_t
        trace.append(w)

    level = float(np.sum(window_eval(Window.TUKEY_HANNING, lags * w * stretch) * r))
    slope = float(np.sum(window_eval(Window.SPLIT_COSINE, lags * w * stretch) * np.abs(lags) * r))
    ratio = _ratio(2.0 * level**2, 3.0 * slope**2)
    if ratio is None or ratio <= 0:
        return degenerate(trace)
    w_opt = ratio ** (1.0 / 3.0) * root_t
    l_opt = max(1, round(1.0 / w_opt))
    return SizeSelection(l_opt=l_opt, l=l_opt, b=1, w_opt=w_opt, w_trace=tuple(trace))


def sizes_for(
    selection: SizeSelection, n_units: int, n_periods: int, l_min: int = DEFAULT_L_MIN
) -> SizeSelection:
    """Apply the floor l >= l_min and the ratio b = (N/T) * l.

    Also keeps l <= T - 1 and b <= N - 1 so both dimensions have at least two
    subsamples.
    """
    floored = max(l_min, selection.l_opt)
    window = max(1, min(floored, n_periods - 1))
    block = round(n_units / n_periods * window)
    block = max(1, min(block, n_units - 1))
    return selection.model_copy(
        update={"l": window, "b": block, "floor_applied": selection.l_opt < l_min}
    )


def select_sizes(
    panel: PanelData,
    l_min: int = DEFAULT_L_MIN,
    n_iterations: int = DEFAULT_ITERATIONS,
    coordinates: Sequence[int] | None = None,
) -> SizeSelection:
    """Choose (b, l) from the data.

    For vector panels the selection runs per coordinate and keeps the largest
    l_opt.
    """
    if panel.n_periods < 2:
        raise ValueError("size selection needs T >= 2")
    chosen: SizeSelection | None = None
    for coordinate in coordinates if coordinates is not None else range(panel.dim):
        selection = buhlmann_l_opt(autocov_hat(panel, coordinate=coordinate), n_iterations)
        selection = selection.model_copy(update={"coordinate": coordinate})
        if chosen is None or selection.l_opt > chosen.l_opt:
            chosen = selection
    if chosen is None:
        raise ValueError("no coordinates to select sizes from")
    result = sizes_for(chosen, panel.n_units, panel.n_periods, l_min)
    logger.debug(
        "Selected l_opt=%d -> (b, l) = (%d, %d) on coordinate %d",
        result.l_opt,
        result.b,
        result.l,
        result.coordinate,
    )
    return result
