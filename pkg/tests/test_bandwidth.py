"""Tests for autocovariance estimation and plug-in size selection."""

import logging
import math

import numpy as np
import pytest

from twoway_subsample.bandwidth import (
    AutocovSeries,
    SizeSelection,
    Window,
    autocov_hat,
    buhlmann_l_opt,
    select_sizes,
    sizes_for,
    window_eval,
)
from twoway_subsample.models import SeedStream, SingleUnit
from twoway_subsample.panel import PanelData
from twoway_subsample.simulate import DgpKind, DgpSpec, generate

from .conftest import naive_autocov, straight_line_l_opt


def geometric(n_periods: int, rho: float = 0.5) -> AutocovSeries:
    values = rho ** np.arange(n_periods, dtype=float)
    return AutocovSeries(values=values, n_periods=n_periods, n_units=10)


def correlated_panel(n_units: int, n_periods: int, rho: float, seed: int) -> PanelData:
    spec = DgpSpec(kind=DgpKind.PROJECTED_MEAN, rho=rho, n_units=n_units, n_periods=n_periods)
    panel = generate(spec, SeedStream(master_seed=seed))
    assert isinstance(panel, PanelData)
    return panel


class TestWindows:
    def test_tukey_hanning(self):
        assert window_eval(Window.TUKEY_HANNING, 0.0) == pytest.approx(1.0)
        assert window_eval(Window.TUKEY_HANNING, 1.0) == pytest.approx(0.0, abs=1e-15)
        assert window_eval(Window.TUKEY_HANNING, 0.5) == pytest.approx(0.5)

    def test_split_cosine(self):
        assert window_eval("split_cosine", 0.5) == 1.0
        assert window_eval("split_cosine", 0.9) == pytest.approx(0.5)
        assert window_eval("split_cosine", 1.2) == 0.0
        assert window_eval("split_cosine", -0.9) == pytest.approx(0.5)

    def test_bartlett(self):
        assert window_eval(Window.BARTLETT, 0.0) == 1.0
        assert window_eval(Window.BARTLETT, 2.0) == 0.0
        assert window_eval(Window.BARTLETT, -0.25) == pytest.approx(0.75)

    def test_bounds(self):
        x = np.linspace(-2.0, 2.0, 4001)
        for kind in Window:
            values = window_eval(kind, x)
            assert values.shape == x.shape
            assert np.all((values >= 0.0) & (values <= 1.0))
            assert np.all(values[np.abs(x) > 1.0] == 0.0)

    def test_flat_top_dominates(self):
        x = np.linspace(0.0, 1.0, 1001)
        split = window_eval(Window.SPLIT_COSINE, x)
        tukey = window_eval(Window.TUKEY_HANNING, x)
        assert np.all(split >= tukey - 1e-15)


class TestAutocovHat:
    def test_constant_time_effect(self):
        panel = PanelData.from_array(np.ones((2, 4)))
        series = autocov_hat(panel, center=False)
        assert series.values[0] == pytest.approx(1.0)
        assert series.values[1] == pytest.approx(0.75)
        assert series.max_lag == 3

    def test_centering_removes_grand_mean(self, rng: np.random.Generator):
        x = rng.standard_normal((5, 8))
        centered = autocov_hat(PanelData.from_array(x + 10.0))
        plain = autocov_hat(PanelData.from_array(x - x.mean()), center=False)
        assert np.allclose(centered.values, plain.values, rtol=1e-10, atol=1e-12)

    def test_matches_double_sum(self, rng: np.random.Generator):
        for _ in range(10):
            x = rng.standard_normal((5, 8))
            series = autocov_hat(PanelData.from_array(x), center=False)
            for k in range(8):
                assert series.values[k] == pytest.approx(naive_autocov(x, k), rel=1e-10, abs=1e-14)

    def test_max_lag(self, small_panel: PanelData):
        assert autocov_hat(small_panel, max_lag=2).values.shape == (3,)
        with pytest.raises(ValueError):
            autocov_hat(small_panel, max_lag=6)

    def test_single_unit(self):
        with pytest.raises(SingleUnit):
            autocov_hat(PanelData.from_array(np.ones((1, 5))))

    def test_no_time_effect_is_unbiased(self):
        draws = np.array(
            [
                autocov_hat(
                    PanelData.from_array(np.random.default_rng(seed).standard_normal((10, 20))),
                    max_lag=2,
                    center=False,
                ).values[1:]
                for seed in range(500)
            ]
        )
        mean = draws.mean(axis=0)
        std_error = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
        assert np.all(np.abs(mean) < 3 * std_error)

    def test_symmetric_extension(self):
        lags, values = geometric(4).symmetric()
        assert list(lags) == [-3, -2, -1, 0, 1, 2, 3]
        assert np.allclose(values, [0.125, 0.25, 0.5, 1.0, 0.5, 0.25, 0.125])


class TestBuhlmannLOpt:
    def test_white_noise_is_degenerate(self, caplog: pytest.LogCaptureFixture):
        values = np.zeros(10)
        values[0] = 1.0
        series = AutocovSeries(values=values, n_periods=10, n_units=5)
        with caplog.at_level(logging.WARNING, logger="twoway_subsample"):
            selection = buhlmann_l_opt(series)
        assert selection.degenerate
        assert selection.l_opt == 1
        assert "Degenerate" in caplog.text

    def test_weak_noise_collapses_every_window(self):
        values = np.full(100, 0.01)
        values[0] = 1.0
        values[1::2] *= -1.0
        series = AutocovSeries(values=values, n_periods=100, n_units=100)
        selection = buhlmann_l_opt(series)
        assert selection.degenerate
        assert selection.l_opt == 1
        assert len(selection.w_trace) < 21
        # The last bandwidth pushes every nonzero lag past the window support.
        support = selection.w_trace[-1] * 100 ** (4 / 21)
        assert support >= 1.0
        assert np.all(window_eval(Window.SPLIT_COSINE, support * np.arange(1, 100)) == 0.0)
        assert sizes_for(selection, 100, 100).l == 4

    def test_matches_straight_line_iteration(self):
        series = geometric(100)
        expected = straight_line_l_opt(list(series.values), 100, 20)
        selection = buhlmann_l_opt(series, 20)
        assert selection.l_opt == expected
        assert not selection.degenerate

    def test_trace_records_every_step(self):
        selection = buhlmann_l_opt(geometric(100), 20)
        assert len(selection.w_trace) == 21
        assert selection.w_trace[0] == pytest.approx(0.01)
        assert selection.w_opt is not None
        assert selection.l_opt == max(1, round(1.0 / selection.w_opt))

    @pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
    def test_scale_invariance(self, scale: float):
        series = geometric(100)
        assert buhlmann_l_opt(series.scaled(scale)).l_opt == buhlmann_l_opt(series).l_opt

    def test_stronger_dependence_gives_longer_windows(self):
        weak = buhlmann_l_opt(geometric(200, 0.2)).l_opt
        strong = buhlmann_l_opt(geometric(200, 0.8)).l_opt
        assert strong > weak

    def test_too_few_iterations(self):
        with pytest.raises(ValueError):
            buhlmann_l_opt(geometric(50), n_iterations=3)


class TestSizes:
    def test_square_panel(self):
        selection = sizes_for(SizeSelection(l_opt=7, l=7, b=1), n_units=50, n_periods=50)
        assert selection.b == selection.l == 7

    def test_floor(self):
        selection = sizes_for(SizeSelection(l_opt=2, l=2, b=1), 100, 100, l_min=4)
        assert selection.l == 4
        assert selection.floor_applied
        assert selection.l_opt == 2

    def test_ratio(self):
        selection = sizes_for(SizeSelection(l_opt=10, l=10, b=1), n_units=50, n_periods=100)
        assert (selection.b, selection.l) == (5, 10)
        assert not selection.floor_applied

    def test_clamped_to_leave_two_subsamples(self):
        selection = sizes_for(SizeSelection(l_opt=500, l=500, b=1), n_units=3, n_periods=100)
        assert selection.l == 99
        assert selection.b == 2

    def test_round_half_to_even(self):
        # (N / T) * l = 2.5 rounds to 2.
        selection = sizes_for(SizeSelection(l_opt=5, l=5, b=1), n_units=50, n_periods=100)
        assert selection.b == 2


class TestSelectSizes:
    def test_square_panel_gives_equal_sizes(self):
        selection = select_sizes(correlated_panel(40, 40, 0.5, seed=3))
        assert selection.b == selection.l
        assert selection.l >= 4

    @pytest.mark.parametrize("scale", [1e-3, 1e3])
    def test_scale_invariance(self, scale: float):
        panel = correlated_panel(30, 60, 0.5, seed=5)
        base = select_sizes(panel)
        scaled = select_sizes(panel.transformed(scale=scale))
        assert (scaled.b, scaled.l) == (base.b, base.l)

    def test_vector_panel_takes_longest_window(self):
        strong = correlated_panel(30, 80, 0.8, seed=1).values[:, :, 0]
        weak = correlated_panel(30, 80, 0.0, seed=2).values[:, :, 0]
        panel = PanelData.from_array(np.stack([weak, strong], axis=2))
        both = select_sizes(panel, l_min=1)
        separate = [select_sizes(panel, l_min=1, coordinates=[c]) for c in range(2)]
        assert both.l_opt == max(s.l_opt for s in separate)

    def test_needs_two_periods(self):
        with pytest.raises(ValueError):
            select_sizes(PanelData.from_array(np.ones((3, 1))))
