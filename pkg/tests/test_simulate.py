"""Tests for the simulation designs, analytic oracles and coverage studies."""

import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from twoway_subsample import simulate
from twoway_subsample.models import InvalidRho, SeedStream, SubsampleError
from twoway_subsample.panel import PanelData
from twoway_subsample.regression import RegressionPanel
from twoway_subsample.simulate import (
    CSV_COLUMNS,
    ConfigError,
    CoverageReport,
    DgpKind,
    DgpSpec,
    Loadings,
    Method,
    PanelSize,
    StudyConfig,
    analytic_bias,
    analytic_v,
    ar1_series,
    coverage_study,
    exact_mean_variance,
    generate,
    normality_summary,
    true_parameter,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def mean_spec(rho: float = 0.5, n: int = 100, t: int | None = None) -> DgpSpec:
    return DgpSpec(kind=DgpKind.PROJECTED_MEAN, rho=rho, n_units=n, n_periods=t or n)


def small_study(**overrides) -> StudyConfig:
    data = {
        "dgp": {"kind": "projected_mean"},
        "rhos": [0.25],
        "panels": [{"n_units": 12, "n_periods": 12, "b": 3, "l": 3}],
        "methods": ["quantile", "variance", "variance_bc", "oracle"],
        "n_reps": 12,
        "seed": 7,
    }
    data.update(overrides)
    return StudyConfig.model_validate(data)


def without_timing(report: CoverageReport) -> list[dict]:
    return [row.model_dump(exclude={"wall_time"}) for row in report.rows]


class TestAr1Series:
    def test_rho_zero_is_white_noise(self):
        series = ar1_series(50, 0.0, SeedStream(master_seed=3))
        expected = SeedStream(master_seed=3).generator().standard_normal(50)
        assert np.array_equal(series, expected)

    def test_stationary_variance(self):
        series = ar1_series(100_000, 0.75, SeedStream(master_seed=11))
        assert series.var() == pytest.approx(1.0, rel=0.03)

    def test_lag_one_autocorrelation(self):
        series = ar1_series(100_000, 0.75, SeedStream(master_seed=12))
        correlation = np.corrcoef(series[:-1], series[1:])[0, 1]
        assert correlation == pytest.approx(0.75, abs=0.02)

    @pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
    def test_invalid_rho(self, rho: float):
        with pytest.raises(InvalidRho):
            ar1_series(10, rho, SeedStream(master_seed=1))

    def test_reproducible(self):
        first = ar1_series(30, 0.5, SeedStream(master_seed=4, stream_index=2))
        second = ar1_series(30, 0.5, SeedStream(master_seed=4, stream_index=2))
        assert np.array_equal(first, second)


class TestGenerate:
    def test_zero_loadings(self):
        spec = DgpSpec(
            kind=DgpKind.PROJECTED_MEAN, rho=0.5, n_units=5, n_periods=6, loadings=Loadings()
        )
        panel = generate(spec, SeedStream(master_seed=1))
        assert isinstance(panel, PanelData)
        assert np.all(panel.values == 0.0)

    def test_regression_structure(self):
        spec = DgpSpec(kind=DgpKind.LINEAR_REGRESSION, rho=0.25, n_units=6, n_periods=7)
        data = generate(spec, SeedStream(master_seed=2))
        assert isinstance(data, RegressionPanel)
        assert data.x.variables == ("const", "x")
        assert np.all(data.x.column(0) == 1.0)
        assert data.u is not None
        expected = 1.0 + data.x.column(1) + data.u.column(0)
        assert np.allclose(data.y.column(0), expected)

    def test_regressor_variance(self):
        spec = DgpSpec(kind=DgpKind.LINEAR_REGRESSION, rho=0.0, n_units=40, n_periods=40)
        second_moments = []
        for seed in range(500):
            data = generate(spec, SeedStream(master_seed=seed))
            assert isinstance(data, RegressionPanel)
            second_moments.append(float(np.mean(data.x.column(1) ** 2)))
        assert np.mean(second_moments) == pytest.approx(0.38, rel=0.03)

    def test_nonseparable_heavy_tails(self):
        spec = DgpSpec(kind=DgpKind.NONSEPARABLE, rho=0.0, n_units=20, n_periods=20)
        scaled_means = []
        for seed in range(2000):
            panel = generate(spec, SeedStream(master_seed=seed))
            assert isinstance(panel, PanelData)
            scaled_means.append(math.sqrt(400) * float(panel.values.mean()))
        summary = normality_summary(scaled_means)
        assert abs(summary["mean"]) < 4 * math.sqrt(summary["variance"] / 2000)
        assert summary["excess_kurtosis"] > 0.5

    def test_seed_determines_panel(self):
        spec = mean_spec(n=8)
        first = generate(spec, SeedStream(master_seed=5))
        second = generate(spec, SeedStream(master_seed=5))
        assert isinstance(first, PanelData) and isinstance(second, PanelData)
        assert np.array_equal(first.values, second.values)

    def test_default_loadings(self):
        assert DgpSpec(kind=DgpKind.NONSEPARABLE, n_units=2, n_periods=2).weights == Loadings(
            interaction=15.0, epsilon=0.1
        )
        assert mean_spec().weights == Loadings(alpha=0.3, gamma=0.5, epsilon=0.2)

    def test_invalid_rho(self):
        with pytest.raises(ValidationError):
            mean_spec(rho=1.0)

    def test_true_parameter(self):
        assert true_parameter(DgpKind.LINEAR_REGRESSION, 1) == 1.0
        assert true_parameter(DgpKind.NONSEPARABLE, 0) == 0.0


class TestAnalyticOracles:
    def test_no_serial_correlation(self):
        assert analytic_v(mean_spec(rho=0.0), c=1.0) == pytest.approx(0.09 + 0.25)

    def test_geometric_series(self):
        assert analytic_v(mean_spec(rho=0.5), c=1.0) == pytest.approx(0.84)

    def test_time_effect_washed_out(self):
        assert analytic_v(mean_spec(rho=0.5), c=0.0) == pytest.approx(0.09)

    def test_ratio_defaults_to_panel_shape(self):
        spec = mean_spec(rho=0.0, n=50, t=100)
        assert analytic_v(spec) == pytest.approx(0.09 + 0.5 * 0.25)

    def test_only_for_projected_mean(self):
        spec = DgpSpec(kind=DgpKind.NONSEPARABLE, n_units=5, n_periods=5)
        with pytest.raises(ValueError):
            analytic_v(spec)
        with pytest.raises(ValueError):
            exact_mean_variance(spec)

    def test_exact_variance_without_dependence(self):
        spec = mean_spec(rho=0.0, n=10, t=20)
        expected = 0.09 / 10 + 0.25 / 20 + 0.04 / 200
        assert exact_mean_variance(spec) == pytest.approx(expected)

    def test_exact_variance_approaches_limit(self):
        spec = mean_spec(rho=0.5, n=1000)
        assert 1000 * exact_mean_variance(spec) == pytest.approx(analytic_v(spec), rel=1e-2)

    def test_exact_variance_matches_double_sum(self):
        spec = mean_spec(rho=0.3, n=4, t=6)
        total = sum(0.3 ** abs(s - t) for s in range(6) for t in range(6))
        expected = 0.09 / 4 + 0.25 * total / 36 + 0.04 / 24
        assert exact_mean_variance(spec) == pytest.approx(expected, rel=1e-12)

    def test_bias(self):
        assert analytic_bias(mean_spec(rho=0.0), l=10) == 0.0
        assert analytic_bias(mean_spec(rho=0.5), l=10, c=1.0) == pytest.approx(-0.1)

    def test_bias_needs_positive_window(self):
        with pytest.raises(ValueError):
            analytic_bias(mean_spec(), l=0)


class TestStudyConfig:
    def test_defaults(self):
        config = small_study()
        assert config.level == 0.95
        assert config.l_min == 4
        assert config.target_coordinate == 0
        regression = small_study(dgp={"kind": "linear_regression"}, methods=["variance"])
        assert regression.target_coordinate == 1
        assert StudyConfig.model_fields["seed"].default == 20240917

    def test_partial_sizes_rejected(self):
        with pytest.raises(ValidationError):
            PanelSize(n_units=10, n_periods=10, b=2)

    def test_sizes_bounded_by_panel(self):
        with pytest.raises(ValidationError):
            PanelSize(n_units=10, n_periods=10, b=11, l=2)

    def test_feasible_needs_regression(self):
        with pytest.raises(ValidationError):
            small_study(methods=["feasible_variance"])

    def test_oracle_needs_projected_mean(self):
        with pytest.raises(ValidationError):
            small_study(dgp={"kind": "nonseparable"}, methods=["oracle"])

    def test_quantile_needs_fixed_sizes(self):
        with pytest.raises(ValidationError):
            small_study(panels=[{"n_units": 12, "n_periods": 12}], methods=["quantile"])

    def test_rho_range(self):
        with pytest.raises(ValidationError):
            small_study(rhos=[0.5, 1.0])

    def test_target_range(self):
        with pytest.raises(ValidationError):
            small_study(target=1)
        with pytest.raises(ValidationError):
            small_study(dgp={"kind": "linear_regression"}, methods=["variance"], target=2)

    @pytest.mark.parametrize(
        "name",
        [
            "quantile_coverage.json",
            "variance_coverage.json",
            "degenerate_mean.json",
            "analytic_v.json",
            "guard_rate.json",
        ],
    )
    def test_presets_load(self, name: str):
        config = StudyConfig.load(CONFIG_DIR / name)
        assert config.n_reps > 0
        assert config.methods

    def test_rates_in_presets(self):
        assert StudyConfig.load(CONFIG_DIR / "degenerate_mean.json").rate.period_exponent == 0.5
        assert StudyConfig.load(CONFIG_DIR / "guard_rate.json").rate.period_exponent == 0.0

    def test_load_yaml(self, write_csv):
        path = write_csv(
            "study.yaml",
            "dgp:\n  kind: nonseparable\nrhos: [0.0]\n"
            "panels:\n  - {n_units: 10, n_periods: 10, b: 2, l: 2}\n"
            "methods: [quantile]\nrate: {unit_exponent: 1/2, period_exponent: 1/2}\n",
        )
        config = StudyConfig.load(path)
        assert config.dgp.kind == DgpKind.NONSEPARABLE
        assert config.rate.period_exponent == 0.5
        assert config.n_reps == simulate.DEFAULT_REPS

    def test_unparseable_file(self, write_csv):
        with pytest.raises(ConfigError):
            StudyConfig.load(write_csv("bad.yaml", "dgp: [unclosed\n"))

    def test_not_a_mapping(self, write_csv):
        with pytest.raises(ConfigError):
            StudyConfig.load(write_csv("list.yaml", "- 1\n- 2\n"))


class TestCoverageStudy:
    def test_rows_per_method(self):
        report = coverage_study(small_study())
        assert [row.method for row in report.rows] == [
            Method.QUANTILE,
            Method.VARIANCE,
            Method.VARIANCE_BC,
            Method.ORACLE,
        ]
        for row in report.rows:
            assert row.n_reps == 12
            assert row.n_failed == 0
            assert row.coverage is not None and 0.0 <= row.coverage <= 1.0
            assert row.mc_std_error == pytest.approx(
                math.sqrt(row.coverage * (1 - row.coverage) / 12)
            )
        assert report.row("quantile", 0.25, 12, 12).b == 3
        assert report.row("oracle", 0.25, 12, 12).b is None

    def test_zero_reps(self):
        report = coverage_study(small_study(n_reps=0))
        for row in report.rows:
            assert row.coverage is None
            assert row.mc_std_error is None
            assert row.n_failed == 0

    def test_reproducible(self):
        config = small_study()
        assert without_timing(coverage_study(config)) == without_timing(coverage_study(config))

    def test_thread_count_does_not_matter(self):
        config = small_study(n_reps=16)
        serial = coverage_study(config, threads=1)
        threaded = coverage_study(config, threads=4)
        assert without_timing(serial) == without_timing(threaded)

    def test_seed_changes_results(self):
        first = coverage_study(small_study(n_reps=30, seed=1))
        second = coverage_study(small_study(n_reps=30, seed=2))
        widths = [row.mean_width for row in first.rows[:3]]
        assert widths != [row.mean_width for row in second.rows[:3]]

    def test_data_driven_sizes(self):
        config = small_study(
            panels=[{"n_units": 20, "n_periods": 20}], methods=["variance"], n_reps=4
        )
        row = coverage_study(config).rows[0]
        assert row.size_rule == "data_driven"
        assert row.b is not None and row.l is not None
        assert row.b == row.l

    def test_regression_study(self):
        config = StudyConfig.model_validate(
            {
                "dgp": {"kind": "linear_regression"},
                "rhos": [0.0],
                "panels": [{"n_units": 16, "n_periods": 16, "b": 4, "l": 4}],
                "methods": ["quantile", "variance", "feasible_variance_bc"],
                "n_reps": 6,
            }
        )
        report = coverage_study(config)
        assert len(report.rows) == 3
        assert all(row.n_failed == 0 for row in report.rows)
        assert all(row.dgp == DgpKind.LINEAR_REGRESSION for row in report.rows)

    def test_failed_repetitions_are_counted(
        self, monkeypatch: pytest.MonkeyPatch, caplog: pytest.LogCaptureFixture
    ):
        def fail(*args, **kwargs):
            raise SubsampleError("boom")

        monkeypatch.setattr(simulate, "sigma_hat", fail)
        with caplog.at_level(logging.WARNING, logger="twoway_subsample"):
            report = coverage_study(small_study(methods=["variance", "oracle"], n_reps=5))
        variance, oracle = report.rows
        assert variance.n_failed == 5
        assert variance.coverage is None
        assert oracle.n_failed == 0
        assert "5 of 5 repetitions failed" in caplog.text

    def test_oracle_coverage_is_nominal(self):
        config = small_study(
            panels=[{"n_units": 20, "n_periods": 20}], methods=["oracle"], n_reps=400
        )
        row = coverage_study(config).rows[0]
        assert row.coverage is not None and row.mc_std_error is not None
        assert abs(row.coverage - 0.95) <= 4 * math.sqrt(0.95 * 0.05 / 400)

    def test_csv_schema(self, tmp_path: Path):
        path = tmp_path / "coverage.csv"
        coverage_study(small_study(n_reps=3)).to_csv(path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == CSV_COLUMNS
        assert len(frame) == 4
        assert set(frame["method"]) == {"quantile", "variance", "variance_bc", "oracle"}

    def test_row_lookup_missing(self):
        report = coverage_study(small_study(n_reps=0))
        with pytest.raises(KeyError):
            report.row("variance", 0.9, 12, 12)


class TestNormalitySummary:
    def test_standard_normal(self, rng: np.random.Generator):
        summary = normality_summary(rng.standard_normal(20_000))
        assert abs(summary["mean"]) < 0.05
        assert summary["variance"] == pytest.approx(1.0, abs=0.05)
        assert abs(summary["excess_kurtosis"]) < 0.2
