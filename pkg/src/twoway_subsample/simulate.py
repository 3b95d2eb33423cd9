"""Data-generating processes, analytic oracles and Monte Carlo coverage studies."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import IO, Any

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats as scipy_stats

from .bandwidth import DEFAULT_ITERATIONS, DEFAULT_L_MIN, select_sizes
from .models import (
    MAX_SEED,
    ConfidenceInterval,
    FloatArray,
    InvalidRho,
    RateSpec,
    SeedStream,
    SubsampleError,
    SubsamplePlan,
)
from .panel import PanelData
from .quantile import build_root_distribution, quantile_ci
from .regression import (
    OlsFit,
    OlsStatistic,
    RegressionPanel,
    ScoreMode,
    ols_fit,
    sandwich_variance,
    select_regression_sizes,
)
from .subsample import MeanStatistic, evaluate_subsamples
from .variance import critical_value, normal_ci, sigma_hat, sigma_hat_bc

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240917
DEFAULT_REPS = 500
BETA = (1.0, 1.0)


class ConfigError(SubsampleError):
    """Raised when a study configuration file cannot be read."""

    pass


class DgpKind(str, Enum):
    """Simulation designs."""

    LINEAR_REGRESSION = "linear_regression"
    NONSEPARABLE = "nonseparable"
    PROJECTED_MEAN = "projected_mean"


class Loadings(BaseModel):
    """Coefficients on the unit effect, time effect, their product and the idiosyncratic term.

    A cell is alpha * a_n + gamma * g_t + interaction * a_n * g_t + epsilon * e_nt
    with standard normal a_n, e_nt and a unit-variance AR(1) g_t.
    """

    model_config = ConfigDict(frozen=True)

    alpha: float = 0.0
    gamma: float = 0.0
    interaction: float = 0.0
    epsilon: float = 0.0

    @classmethod
    def default_for(cls, kind: DgpKind) -> Loadings:
        if kind == DgpKind.NONSEPARABLE:
            return cls(interaction=15.0, epsilon=0.1)
        return cls(alpha=0.3, gamma=0.5, epsilon=0.2)

    @property
    def v_a(self) -> float:
        return self.alpha**2

    @property
    def v_b(self) -> float:
        return self.gamma**2

    @property
    def v_e(self) -> float:
        return self.epsilon**2


class DgpSpec(BaseModel):
    """One simulation design at a fixed panel size."""

    model_config = ConfigDict(frozen=True)

    kind: DgpKind
    rho: float = 0.0
    n_units: int = Field(ge=1)
    n_periods: int = Field(ge=1)
    loadings: Loadings | None = None

    @model_validator(mode="after")
    def validate_spec(self) -> DgpSpec:
        if not -1 < self.rho < 1:
            raise ValueError(f"rho={self.rho} must lie in (-1, 1)")
        return self

    @property
    def weights(self) -> Loadings:
        """The given loadings, or the defaults for the kind."""
        return self.loadings if self.loadings is not None else Loadings.default_for(self.kind)

    @property
    def ratio(self) -> float:
        """c = N / T."""
        return self.n_units / self.n_periods


def _check_rho(rho: float) -> None:
    if not -1 < rho < 1:
        raise InvalidRho(f"rho={rho} must lie in (-1, 1)")


def _ar1(length: int, rho: float, rng: np.random.Generator) -> FloatArray:
    _check_rho(rho)
    innovations = rng.standard_normal(length)
    series = np.empty(length, dtype=np.float64)
    series[0] = innovations[0]
    scale = math.sqrt(1.0 - rho**2)
    for t in range(1, length):
        series[t] = rho * series[t - 1] + scale * innovations[t]
    return series


def ar1_series(length: int, rho: float, seed: SeedStream) -> FloatArray:
    """Stationary AR(1) with unit variance: g_1 ~ N(0, 1), innovations N(0, 1 - rho**2)."""
    return _ar1(length, rho, seed.generator())


def _component_panel(spec: DgpSpec, rng: np.random.Generator) -> FloatArray:
    """One (N, T) draw; the draw order is fixed so a seed always gives the same panel."""
    weights = spec.weights
    unit_effect = rng.standard_normal(spec.n_units)
    time_effect = _ar1(spec.n_periods, spec.rho, rng)
    idiosyncratic = rng.standard_normal((spec.n_units, spec.n_periods))
    result: FloatArray = (
        weights.alpha * unit_effect[:, None]
        + weights.gamma * time_effect[None, :]
        + weights.interaction * np.outer(unit_effect, time_effect)
        + weights.epsilon * idiosyncratic
    )
    return result


def generate(spec: DgpSpec, seed: SeedStream) -> RegressionPanel | PanelData:
    """Draw one panel.

    linear_regression gives Y = 1 + X + U with independent X and U components;
    the other kinds give a scalar panel whose mean is zero.
    """
    rng = seed.generator()
    if spec.kind != DgpKind.LINEAR_REGRESSION:
        return PanelData.from_array(_component_panel(spec, rng), variables=["x"])
    x = _component_panel(spec, rng)
    u = _component_panel(spec, rng)
    y = BETA[0] + BETA[1] * x + u
    ones = np.ones_like(x)
    return RegressionPanel(
        y=PanelData.from_array(y, variables=["y"]),
        x=PanelData.from_array(np.stack([ones, x], axis=2), variables=["const", "x"]),
        u=PanelData.from_array(u, variables=["u"]),
    )


def true_parameter(kind: DgpKind, coordinate: int) -> float:
    """The value intervals should cover: beta_j for regression, 0 for the means."""
    if kind == DgpKind.LINEAR_REGRESSION:
        return BETA[coordinate]
    return 0.0


def analytic_v(spec: DgpSpec, c: float | None = None) -> float:
    """V = V_a + c * V_b * (1 + rho) / (1 - rho) for the projected mean."""
    _check_rho(spec.rho)
    if spec.kind != DgpKind.PROJECTED_MEAN:
        raise ValueError("the closed-form V is only available for projected_mean")
    c = spec.ratio if c is None else c
    weights = spec.weights
    return weights.v_a + c * weights.v_b * (1 + spec.rho) / (1 - spec.rho)


def exact_mean_variance(spec: DgpSpec) -> float:
    """Finite-sample Var of the panel mean for the projected_mean design."""
    _check_rho(spec.rho)
    if spec.kind != DgpKind.PROJECTED_MEAN:
        raise ValueError("the exact variance is only available for projected_mean")
    n, t = spec.n_units, spec.n_periods
    lags = np.arange(1, t, dtype=np.float64)
    # sum over s, t of rho**|s - t|
    total = t + 2.0 * float(np.sum((t - lags) * spec.rho**lags))
    weights = spec.weights
    return weights.v_a / n + weights.v_b * total / t**2 + weights.v_e / (n * t)


def analytic_bias(spec: DgpSpec, l: int, c: float | None = None) -> float:  # noqa: E741
    """Leading bias of the subsampling variance, -(2c/l) * V_b * rho / (1 - rho)**2."""
    _check_rho(spec.rho)
    if l < 1:
        raise ValueError(f"l={l} must be positive")
    c = spec.ratio if c is None else c
    return -(2.0 * c / l) * spec.weights.v_b * spec.rho / (1.0 - spec.rho) ** 2


class Method(str, Enum):
    """Interval constructions compared in a coverage study."""

    QUANTILE = "quantile"
    VARIANCE = "variance"
    VARIANCE_BC = "variance_bc"
    FEASIBLE_VARIANCE = "feasible_variance"
    FEASIBLE_VARIANCE_BC = "feasible_variance_bc"
    ORACLE = "oracle"

    @property
    def bias_corrected(self) -> bool:
        return self in (Method.VARIANCE_BC, Method.FEASIBLE_VARIANCE_BC)

    @property
    def score_mode(self) -> ScoreMode:
        if self in (Method.FEASIBLE_VARIANCE, Method.FEASIBLE_VARIANCE_BC):
            return ScoreMode.FEASIBLE
        return ScoreMode.INFEASIBLE


class DgpConfig(BaseModel):
    kind: DgpKind
    loadings: Loadings | None = None


class PanelSize(BaseModel):
    """One (N, T) cell; b and l left out means data-driven sizes."""

    model_config = ConfigDict(frozen=True)

    n_units: int = Field(ge=2)
    n_periods: int = Field(ge=2)
    b: int | None = Field(default=None, ge=1)
    l: int | None = Field(default=None, ge=1)  # noqa: E741

    @model_validator(mode="after")
    def validate_sizes(self) -> PanelSize:
        if (self.b is None) != (self.l is None):
            raise ValueError("give both b and l, or neither for data-driven sizes")
        if self.b is not None and self.b > self.n_units:
            raise ValueError(f"b={self.b} exceeds N={self.n_units}")
        if self.l is not None and self.l > self.n_periods:
            raise ValueError(f"l={self.l} exceeds T={self.n_periods}")
        return self

    @property
    def fixed(self) -> bool:
        return self.b is not None


class StudyConfig(BaseModel):
    """A coverage study: design grid, methods and Monte Carlo settings."""

    dgp: DgpConfig
    rhos: list[float] = Field(min_length=1)
    panels: list[PanelSize] = Field(min_length=1)
    methods: list[Method] = Field(min_length=1)
    n_reps: int = Field(default=DEFAULT_REPS, ge=0)
    seed: int = Field(default=DEFAULT_SEED, ge=0, le=MAX_SEED)
    level: float = Field(default=0.95, gt=0, lt=1)
    target: int | None = Field(default=None, ge=0)
    rate: RateSpec = Field(default_factory=RateSpec.root_units)
    l_min: int = Field(default=DEFAULT_L_MIN, ge=1)
    n_iterations: int = Field(default=DEFAULT_ITERATIONS, ge=4)
    threads: int = Field(default=1, ge=1)
    include_remainder_block: bool = True

    @model_validator(mode="after")
    def validate_study(self) -> StudyConfig:
        for rho in self.rhos:
            if not -1 < rho < 1:
                raise ValueError(f"rho={rho} must lie in (-1, 1)")
        regression = self.dgp.kind == DgpKind.LINEAR_REGRESSION
        for method in self.methods:
            if method.score_mode == ScoreMode.FEASIBLE and not regression:
                raise ValueError(f"{method.value} only applies to linear_regression")
            if method == Method.ORACLE and self.dgp.kind != DgpKind.PROJECTED_MEAN:
                raise ValueError("oracle only applies to projected_mean")
        if Method.QUANTILE in self.methods and not all(p.fixed for p in self.panels):
            raise ValueError("the quantile method needs fixed b and l for every panel")
        if self.target is not None and not regression and self.target != 0:
            raise ValueError("scalar designs only have coordinate 0")
        if self.target is not None and regression and self.target > 1:
            raise ValueError("linear_regression has coordinates 0 and 1")
        return self

    @property
    def target_coordinate(self) -> int:
        if self.target is not None:
            return self.target
        return 1 if self.dgp.kind == DgpKind.LINEAR_REGRESSION else 0

    @classmethod
    def load(cls, path: Path) -> StudyConfig:
        """Load a study from a JSON or YAML file."""
        try:
            with open(path, encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: cannot parse config: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.model_validate(data)


class CoverageRow(BaseModel):
    """Coverage of one method in one (rho, N, T) cell."""

    model_config = ConfigDict(populate_by_name=True)

    dgp: DgpKind
    rho: float
    n_units: int = Field(serialization_alias="N")
    n_periods: int = Field(serialization_alias="T")
    b: int | float | None
    l: int | float | None  # noqa: E741
    method: Method
    n_reps: int
    coverage: float | None
    mc_std_error: float | None
    wall_time: float
    n_failed: int = 0
    size_rule: str = "fixed"
    mean_width: float | None = None

    @model_validator(mode="after")
    def validate_coverage(self) -> CoverageRow:
        if self.coverage is not None and not 0 <= self.coverage <= 1:
            raise ValueError(f"coverage={self.coverage} must lie in [0, 1]")
        return self


CSV_COLUMNS = [
    "dgp",
    "rho",
    "N",
    "T",
    "b",
    "l",
    "method",
    "n_reps",
    "coverage",
    "mc_std_error",
    "wall_time",
    "n_failed",
    "size_rule",
    "mean_width",
]


class CoverageReport(BaseModel):
    rows: list[CoverageRow]
    level: float
    seed: int

    def to_frame(self) -> pd.DataFrame:
        records = [row.model_dump(mode="json", by_alias=True) for row in self.rows]
        return pd.DataFrame.from_records(records, columns=CSV_COLUMNS)

    def to_csv(self, target: Path | IO[str]) -> None:
        self.to_frame().to_csv(target, index=False)

    def row(self, method: Method | str, rho: float, n_units: int, n_periods: int) -> CoverageRow:
        """Look up one row."""
        method = Method(method)
        for row in self.rows:
            key = (row.method, row.rho, row.n_units, row.n_periods)
            if key == (method, rho, n_units, n_periods):
                return row
        raise KeyError(f"no row for {method.value}, rho={rho}, N={n_units}, T={n_periods}")


class _Outcome(BaseModel):
    """One method's result in one repetition; `covered` is None on failure."""

    covered: bool | None
    width: float | None = None
    b: int | None = None
    l: int | None = None  # noqa: E741


class _Repetition:
    """Draws one data set and builds every method's interval on it."""

    def __init__(self, config: StudyConfig, spec: DgpSpec, size: PanelSize, index: int) -> None:
        self.config = config
        self.spec = spec
        self.size = size
        stream = SeedStream(master_seed=config.seed, stream_index=index)
        self.data_seed = SeedStream(master_seed=stream.derive_seed(0))
        self.partition_seed = stream.derive_seed(1)
        self.coordinate = config.target_coordinate
        self.truth = true_parameter(spec.kind, self.coordinate)

    def run(self, methods: Sequence[Method]) -> list[_Outcome]:
        try:
            data = generate(self.spec, self.data_seed)
            fit = ols_fit(data) if isinstance(data, RegressionPanel) else None
        except SubsampleError as e:
            logger.debug("Repetition failed before inference: %s", e)
            return [_Outcome(covered=None) for _ in methods]
        outcomes = []
        for method in methods:
            try:
                interval, plan = self._interval(method, data, fit)
            except SubsampleError as e:
                logger.debug("%s failed: %s", method.value, e)
                outcomes.append(_Outcome(covered=None))
                continue
            outcomes.append(
                _Outcome(
                    covered=interval.contains(self.truth),
                    width=interval.width,
                    b=plan.b if plan else None,
                    l=plan.l if plan else None,
                )
            )
        return outcomes

    def _plan(
        self, data: RegressionPanel | PanelData, fit: OlsFit | None, method: Method
    ) -> SubsamplePlan:
        if self.size.b is not None and self.size.l is not None:
            b, l = self.size.b, self.size.l  # noqa: E741
        elif isinstance(data, RegressionPanel) and fit is not None:
            selection = select_regression_sizes(
                data, fit, method.score_mode, self.config.l_min, self.config.n_iterations
            )
            b, l = selection.b, selection.l  # noqa: E741
        else:
            assert isinstance(data, PanelData)
            selection = select_sizes(data, self.config.l_min, self.config.n_iterations)
            b, l = selection.b, selection.l  # noqa: E741
        return SubsamplePlan(
            b=b,
            l=l,
            rate=self.config.rate,
            partition_seed=self.partition_seed,
            include_remainder_block=self.config.include_remainder_block,
        )

    def _interval(
        self, method: Method, data: RegressionPanel | PanelData, fit: OlsFit | None
    ) -> tuple[ConfidenceInterval, SubsamplePlan | None]:
        level = self.config.level
        n_units, n_periods = self.spec.n_units, self.spec.n_periods

        if method == Method.ORACLE:
            assert isinstance(data, PanelData)
            center = float(data.values.mean())
            half = critical_value(level) * math.sqrt(exact_mean_variance(self.spec))
            ci = ConfidenceInterval(
                estimate=center, lower=center - half, upper=center + half, level=level
            )
            return ci, None

        plan = self._plan(data, fit, method)
        if isinstance(data, RegressionPanel):
            assert fit is not None
            if method == Method.QUANTILE:
                stats = evaluate_subsamples(
                    data.joined(), plan, OlsStatistic(data.n_regressors)
                )
                dist = build_root_distribution(stats, fit.beta_hat, self.coordinate)
                return quantile_ci(dist, level), plan
            variance = sandwich_variance(
                data, fit, plan, method.score_mode, method.bias_corrected, warn_sizes=False
            )
            tau_full = math.sqrt(n_units)
            return normal_ci(fit.beta_hat, variance, tau_full, level, self.coordinate), plan

        estimate = data.values.mean(axis=(0, 1))
        stats = evaluate_subsamples(data, plan, MeanStatistic())
        if method == Method.QUANTILE:
            return quantile_ci(build_root_distribution(stats, estimate), level), plan
        if method.bias_corrected:
            small_stats = evaluate_subsamples(data, plan.smaller(), MeanStatistic())
            estimate_variance = sigma_hat_bc(stats, small_stats)
        else:
            estimate_variance = sigma_hat(stats)
        tau_full = plan.rate.tau(n_units, n_periods)
        return normal_ci(estimate, estimate_variance, tau_full, level), plan


def _median(values: list[int]) -> int | float | None:
    if not values:
        return None
    middle = float(np.median(values))
    return int(middle) if middle.is_integer() else middle


def _summarize(
    config: StudyConfig,
    spec: DgpSpec,
    size: PanelSize,
    method: Method,
    outcomes: list[_Outcome],
    wall_time: float,
) -> CoverageRow:
    done = [o for o in outcomes if o.covered is not None]
    n_failed = len(outcomes) - len(done)
    if n_failed:
        logger.warning(
            "%s at rho=%g, N=%d, T=%d: %d of %d repetitions failed",
            method.value,
            spec.rho,
            spec.n_units,
            spec.n_periods,
            n_failed,
            len(outcomes),
        )
    coverage = mc_std_error = mean_width = None
    if done:
        coverage = sum(1 for o in done if o.covered) / len(done)
        mc_std_error = math.sqrt(coverage * (1.0 - coverage) / len(done))
        mean_width = float(np.mean([o.width for o in done if o.width is not None]))
    if method == Method.ORACLE:
        b = l = None  # noqa: E741
    elif size.fixed:
        b, l = size.b, size.l  # noqa: E741
    else:
        b = _median([o.b for o in done if o.b is not None])
        l = _median([o.l for o in done if o.l is not None])  # noqa: E741
    return CoverageRow(
        dgp=spec.kind,
        rho=spec.rho,
        n_units=spec.n_units,
        n_periods=spec.n_periods,
        b=b,
        l=l,
        method=method,
        n_reps=config.n_reps,
        coverage=coverage,
        mc_std_error=mc_std_error,
        wall_time=round(wall_time, 3),
        n_failed=n_failed,
        size_rule="fixed" if size.fixed or method == Method.ORACLE else "data_driven",
        mean_width=mean_width,
    )


def coverage_study(config: StudyConfig, threads: int | None = None) -> CoverageReport:
    """Run every (rho, panel) cell of the study for every method.

    Repetition r of a cell draws from stream r of the master seed, so results
    do not depend on the number of worker threads.
    """
    workers = threads or config.threads
    rows: list[CoverageRow] = []
    for rho in config.rhos:
        for size in config.panels:
            spec = DgpSpec(
                kind=config.dgp.kind,
                rho=rho,
                n_units=size.n_units,
                n_periods=size.n_periods,
                loadings=config.dgp.loadings,
            )
            logger.info(
                "Running %s rho=%g N=%d T=%d with %d reps",
                spec.kind.value,
                rho,
                size.n_units,
                size.n_periods,
                config.n_reps,
            )
            started = time.perf_counter()

            def repeat(index: int, spec: DgpSpec = spec, size: PanelSize = size) -> list[_Outcome]:
                return _Repetition(config, spec, size, index).run(config.methods)

            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(repeat, range(config.n_reps)))
            else:
                results = [repeat(index) for index in range(config.n_reps)]
            elapsed = time.perf_counter() - started

            for position, method in enumerate(config.methods):
                outcomes = [result[position] for result in results]
                rows.append(_summarize(config, spec, size, method, outcomes, elapsed))
    return CoverageReport(rows=rows, level=config.level, seed=config.seed)


def normality_summary(values: Sequence[float]) -> dict[str, Any]:
    """Mean, variance and excess kurtosis of a sample, for t-statistic checks."""
    array = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(array.mean()),
        "variance": float(array.var(ddof=1)),
        "excess_kurtosis": float(scipy_stats.kurtosis(array)),
    }
