"""CLI for twoway-subsample."""

from __future__ import annotations

import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import click
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from .bandwidth import DEFAULT_ITERATIONS, DEFAULT_L_MIN, select_sizes
from .models import (
    IntervalSide,
    RateSpec,
    SubsampleError,
    SubsamplePlan,
    ZeroVariance,
)
from .output import (
    bandwidth_result,
    emit_json,
    ols_result,
    print_bandwidth_trace,
    print_coverage_report,
    quantile_result,
    variance_result,
)
from .panel import PanelData, load_panel_csv
from .quantile import build_root_distribution, quantile_ci
from .regression import (
    OlsStatistic,
    RegressionPanel,
    ScoreMode,
    coefficient_intervals,
    ols_fit,
    sandwich_variance,
    select_regression_sizes,
    t_statistic,
)
from .simulate import DEFAULT_SEED, StudyConfig, coverage_study
from .subsample import MeanStatistic, evaluate_subsamples
from .variance import normal_ci, sigma_hat, sigma_hat_bc

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


def _configure_logging(verbose: bool) -> None:
    """Send library diagnostics to stderr through rich."""
    package_logger = logging.getLogger("twoway_subsample")
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False, show_time=verbose)
    handler.setFormatter(logging.Formatter("%(message)s"))
    package_logger.addHandler(handler)
    package_logger.setLevel(logging.DEBUG if verbose else logging.WARNING)


def _rate(unit_exponent: str, period_exponent: str) -> RateSpec:
    try:
        return RateSpec.model_validate(
            {"unit_exponent": unit_exponent, "period_exponent": period_exponent}
        )
    except (ValidationError, ValueError, ZeroDivisionError) as e:
        raise click.BadParameter(str(e), param_hint="--unit-exponent/--period-exponent") from e


def _sizes(
    b: int | None, l: int | None, panel: PanelData, l_min: int, iterations: int  # noqa: E741
) -> tuple[int, int]:
    if (b is None) != (l is None):
        raise click.UsageError("give both --b and --l, or neither for data-driven sizes")
    if b is not None and l is not None:
        return b, l
    selection = select_sizes(panel, l_min, iterations)
    logger.info(
        "Data-driven sizes: b=%d, l=%d (l_opt=%d)", selection.b, selection.l, selection.l_opt
    )
    return selection.b, selection.l


@click.group()
@click.version_option(package_name="twoway-subsample")
@click.option("--verbose", "-v", is_flag=True, help="Show debug diagnostics on stderr")
def cli(verbose: bool) -> None:
    """Subsampling inference for two-way clustered panels."""
    _configure_logging(verbose)


@cli.command()
@click.option(
    "--panel",
    "panel_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Long-format CSV with header unit,time,v1[,v2,...]",
)
@click.option("--statistic", type=click.Choice(["mean"]), default="mean", show_default=True)
@click.option(
    "--method", type=click.Choice(["quantile", "variance"]), default="quantile", show_default=True
)
@click.option("--model", type=click.Choice(["ols"]), help="Regress the outcome column on the rest")
@click.option("--b", "b", type=click.IntRange(min=1), help="Unit-block size")
@click.option("--l", "l", type=click.IntRange(min=1), help="Time-window length")
@click.option("--b-small", type=click.IntRange(min=1), help="Bias-correction block size")
@click.option("--l-small", type=click.IntRange(min=1), help="Bias-correction window length")
@click.option("--level", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.95)
@click.option(
    "--side",
    type=click.Choice([s.value for s in IntervalSide]),
    default=IntervalSide.TWO_SIDED_EQUAL_TAIL.value,
    show_default=True,
)
@click.option("--bias-correct", is_flag=True, help="Apply the small-subsample bias correction")
@click.option("--coordinate", type=click.IntRange(min=0), default=0, help="Coordinate of the mean")
@click.option("--target", type=click.IntRange(min=0), default=1, help="OLS coefficient of interest")
@click.option("--outcome", type=click.IntRange(min=0), default=0, help="OLS outcome column")
@click.option("--intercept/--no-intercept", default=True, show_default=True)
@click.option("--null", "null_value", type=float, default=0.0, help="Null value for t-statistics")
@click.option("--seed", type=click.IntRange(min=0), default=DEFAULT_SEED, show_default=True)
@click.option("--exclude-remainder", is_flag=True, help="Drop the short last unit block")
@click.option("--unit-exponent", default="1/2", show_default=True, help="p in tau = m^p s^q")
@click.option("--period-exponent", default="0", show_default=True, help="q in tau = m^p s^q")
@click.option("--l-min", type=click.IntRange(min=1), default=DEFAULT_L_MIN, show_default=True)
@click.option("--iterations", type=click.IntRange(min=4), default=DEFAULT_ITERATIONS)
def infer(
    panel_path: Path,
    statistic: str,
    method: str,
    model: str | None,
    b: int | None,
    l: int | None,  # noqa: E741
    b_small: int | None,
    l_small: int | None,
    level: float,
    side: str,
    bias_correct: bool,
    coordinate: int,
    target: int,
    outcome: int,
    intercept: bool,
    null_value: float,
    seed: int,
    exclude_remainder: bool,
    unit_exponent: str,
    period_exponent: str,
    l_min: int,
    iterations: int,
) -> None:
    """Confidence interval for a panel mean or OLS coefficients."""
    if bias_correct and method != "variance":
        raise click.UsageError("--bias-correct applies to --method variance")
    if method == "variance" and side != IntervalSide.TWO_SIDED_EQUAL_TAIL.value:
        raise click.UsageError("--side applies to --method quantile")

    panel = load_panel_csv(panel_path)
    rate = _rate(unit_exponent, period_exponent)

    if model == "ols":
        _infer_ols(
            panel,
            method,
            b,
            l,
            b_small,
            l_small,
            level,
            side,
            bias_correct,
            target,
            outcome,
            intercept,
            null_value,
            seed,
            exclude_remainder,
            rate,
            l_min,
            iterations,
        )
        return

    if coordinate >= panel.dim:
        raise click.BadParameter(
            f"panel has {panel.dim} value column(s)", param_hint="--coordinate"
        )
    block, window = _sizes(b, l, panel.select([coordinate]), l_min, iterations)
    plan = SubsamplePlan(
        b=block,
        l=window,
        rate=rate,
        partition_seed=seed,
        include_remainder_block=not exclude_remainder,
    )
    estimate = panel.values.mean(axis=(0, 1))
    stats = evaluate_subsamples(panel, plan, MeanStatistic())

    if method == "quantile":
        dist = build_root_distribution(stats, estimate, coordinate)
        ci = quantile_ci(dist, level, side)
        emit_json(quantile_result(ci, plan, stats.count, statistic, coordinate))
        return

    if bias_correct:
        small_plan = plan.smaller(b_small, l_small)
        small_stats = evaluate_subsamples(panel, small_plan, MeanStatistic())
        variance = sigma_hat_bc(stats, small_stats)
    else:
        variance = sigma_hat(stats)
    tau_full = rate.tau(panel.n_units, panel.n_periods)
    ci = normal_ci(estimate, variance, tau_full, level, coordinate)
    emit_json(variance_result(ci, variance, statistic, coordinate))


def _infer_ols(
    panel: PanelData,
    method: str,
    b: int | None,
    l: int | None,  # noqa: E741
    b_small: int | None,
    l_small: int | None,
    level: float,
    side: str,
    bias_correct: bool,
    target: int,
    outcome: int,
    intercept: bool,
    null_value: float,
    seed: int,
    exclude_remainder: bool,
    rate: RateSpec,
    l_min: int,
    iterations: int,
) -> None:
    if outcome >= panel.dim:
        raise click.BadParameter(f"panel has {panel.dim} value column(s)", param_hint="--outcome")
    try:
        data = RegressionPanel.from_panel(panel, outcome, intercept)
    except ValueError as e:
        raise click.UsageError(str(e)) from e
    if target >= data.n_regressors:
        raise click.BadParameter(
            f"model has {data.n_regressors} coefficient(s)", param_hint="--target"
        )
    fit = ols_fit(data)

    if (b is None) != (l is None):
        raise click.UsageError("give both --b and --l, or neither for data-driven sizes")
    if b is None or l is None:
        selection = select_regression_sizes(data, fit, ScoreMode.FEASIBLE, l_min, iterations)
        b, l = selection.b, selection.l  # noqa: E741
    plan = SubsamplePlan(
        b=b, l=l, rate=rate, partition_seed=seed, include_remainder_block=not exclude_remainder
    )

    if method == "quantile":
        stats = evaluate_subsamples(data.joined(), plan, OlsStatistic(data.n_regressors))
        dist = build_root_distribution(stats, fit.beta_hat, target)
        ci = quantile_ci(dist, level, side)
        emit_json(quantile_result(ci, plan, stats.count, "ols", target))
        return

    small_plan = plan.smaller(b_small, l_small) if bias_correct else None
    variance = sandwich_variance(
        data, fit, plan, ScoreMode.FEASIBLE, bias_correct=bias_correct, small_plan=small_plan
    )
    intervals = coefficient_intervals(fit, variance, level)
    t_statistics: list[float | None] = []
    for j in range(data.n_regressors):
        try:
            t_statistics.append(t_statistic(fit, variance, j, null_value))
        except ZeroVariance as e:
            logger.warning("No t-statistic for coefficient %d: %s", j, e)
            t_statistics.append(None)
    names = data.x.variables
    emit_json(
        ols_result(fit, variance, intervals, t_statistics, names, target, ScoreMode.FEASIBLE.value)
    )


@cli.command()
@click.option(
    "--panel",
    "panel_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--l-min", type=click.IntRange(min=1), default=DEFAULT_L_MIN, show_default=True)
@click.option(
    "--iterations", type=click.IntRange(min=4), default=DEFAULT_ITERATIONS, show_default=True
)
@click.option(
    "--coordinate",
    "coordinates",
    type=click.IntRange(min=0),
    multiple=True,
    help="Coordinates to select on (default: all, largest l_opt wins)",
)
@click.option("--format", "fmt", type=click.Choice(["json", "table"]), default="json")
def bandwidth(
    panel_path: Path, l_min: int, iterations: int, coordinates: tuple[int, ...], fmt: str
) -> None:
    """Data-driven subsample sizes (b, l) for a panel."""
    panel = load_panel_csv(panel_path)
    for coordinate in coordinates:
        if coordinate >= panel.dim:
            raise click.BadParameter(
                f"panel has {panel.dim} value column(s)", param_hint="--coordinate"
            )
    selection = select_sizes(panel, l_min, iterations, coordinates or None)
    if fmt == "table":
        print_bandwidth_trace(selection)
    else:
        emit_json(bandwidth_result(selection))


@cli.command()
@click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Study configuration (JSON or YAML)",
)
@click.option("--seed", type=click.IntRange(min=0), help="Override the master seed")
@click.option("--reps", type=click.IntRange(min=0), help="Override the number of repetitions")
@click.option("--threads", type=click.IntRange(min=1), help="Worker threads")
@click.option(
    "--format",
    "fmt",
    type=click.Choice(["table", "csv", "json"]),
    default="table",
    show_default=True,
)
@click.option(
    "--output",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Also write the report as CSV to this file",
)
def simulate(
    config_path: Path,
    seed: int | None,
    reps: int | None,
    threads: int | None,
    fmt: str,
    output: Path | None,
) -> None:
    """Monte Carlo coverage study."""
    config = StudyConfig.load(config_path)
    overrides = {
        key: value
        for key, value in (("seed", seed), ("n_reps", reps), ("threads", threads))
        if value is not None
    }
    if overrides:
        config = StudyConfig.model_validate({**config.model_dump(), **overrides})

    report = coverage_study(config)

    if output is not None:
        report.to_csv(output)
        logger.info("Wrote %d rows to %s", len(report.rows), output)
    if fmt == "csv":
        click.echo(report.to_frame().to_csv(index=False), nl=False)
    elif fmt == "json":
        emit_json(report)
    else:
        print_coverage_report(report)


def run(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    try:
        result = cli.main(
            args=list(argv) if argv is not None else None,
            prog_name="twoway-subsample",
            standalone_mode=False,
        )
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    except (SubsampleError, ValidationError, ValueError) as e:
        click.echo(f"Error: {e}", err=True)
        return EXIT_DATA
    return result if isinstance(result, int) else EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
