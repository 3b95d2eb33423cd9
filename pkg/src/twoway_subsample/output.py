"""Output documents and formatting for inference, bandwidth and coverage results."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, cast

import click
from pydantic import BaseModel, ConfigDict, Field
from rich.console import Console
from rich.table import Table

from .bandwidth import SizeSelection
from .models import ConfidenceInterval, IntervalSide, SubsamplePlan, VarianceEstimate
from .regression import OlsFit, ScoreMode
from .simulate import CoverageReport, CoverageRow

console = Console()

Statistic = Literal["mean", "ols"]


class QuantileInferenceResult(BaseModel):
    """`infer --method quantile` output. Infinite endpoints are null."""

    model_config = ConfigDict(extra="forbid")

    method: Literal["quantile"] = "quantile"
    statistic: Statistic
    coordinate: int = Field(ge=0)
    estimate: float
    lower: float | None
    upper: float | None
    level: float = Field(gt=0, lt=1)
    side: IntervalSide
    b: int = Field(ge=1)
    l: int = Field(ge=1)  # noqa: E741
    n_subsamples: int = Field(ge=1)
    rate: str


class VarianceInferenceResult(BaseModel):
    """`infer --method variance` output."""

    model_config = ConfigDict(extra="forbid")

    method: Literal["variance"] = "variance"
    statistic: Literal["mean"]
    coordinate: int = Field(ge=0)
    estimate: float
    variance: float
    lower: float
    upper: float
    level: float = Field(gt=0, lt=1)
    b: int = Field(ge=1)
    l: int = Field(ge=1)  # noqa: E741
    b_small: int | None
    l_small: int | None
    clipped: bool
    rate: str


class CoefficientResult(BaseModel):
    """Normal interval and t-statistic for one OLS coefficient."""

    model_config = ConfigDict(extra="forbid")

    coordinate: int = Field(ge=0)
    name: str
    estimate: float
    lower: float
    upper: float
    t_statistic: float | None
    clipped: bool


class OlsInferenceResult(BaseModel):
    """`infer --model ols` output."""

    model_config = ConfigDict(extra="forbid")

    method: Literal["ols"] = "ols"
    target: int = Field(ge=0)
    mode: ScoreMode
    beta_hat: list[float]
    variance: list[list[float]]
    coefficients: list[CoefficientResult]
    level: float = Field(gt=0, lt=1)
    b: int = Field(ge=1)
    l: int = Field(ge=1)  # noqa: E741
    b_small: int | None
    l_small: int | None
    bias_corrected: bool


class BandwidthResult(BaseModel):
    """`bandwidth` output. `w_opt` is null when the iteration degenerated."""

    model_config = ConfigDict(extra="forbid")

    l_opt: int = Field(ge=1)
    b: int = Field(ge=1)
    l: int = Field(ge=1)  # noqa: E741
    w_opt: float | None
    iterations: list[float]
    floor_applied: bool
    degenerate: bool
    coordinate: int = Field(ge=0)


# Shipped in docs/schemas/<name>.schema.json; regenerate with write_result_schemas.
RESULT_MODELS: dict[str, type[BaseModel]] = {
    "infer_quantile": QuantileInferenceResult,
    "infer_variance": VarianceInferenceResult,
    "infer_ols": OlsInferenceResult,
    "bandwidth": BandwidthResult,
}


def write_result_schemas(directory: Path) -> list[Path]:
    """Write the JSON schema of every result document into `directory`."""
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, model in RESULT_MODELS.items():
        path = directory / f"{name}.schema.json"
        path.write_text(json.dumps(model.model_json_schema(), indent=2) + "\n", encoding="utf-8")
        written.append(path)
    return written


def quantile_result(
    ci: ConfidenceInterval,
    plan: SubsamplePlan,
    n_subsamples: int,
    statistic: str,
    coordinate: int,
) -> QuantileInferenceResult:
    lower, upper = ci.bound_or_none()
    return QuantileInferenceResult(
        statistic=cast(Statistic, statistic),
        coordinate=coordinate,
        estimate=ci.estimate,
        lower=lower,
        upper=upper,
        level=ci.level,
        side=ci.side,
        b=plan.b,
        l=plan.l,
        n_subsamples=n_subsamples,
        rate=str(plan.rate),
    )


def variance_result(
    ci: ConfidenceInterval,
    variance: VarianceEstimate,
    statistic: str,
    coordinate: int,
) -> VarianceInferenceResult:
    small = variance.small_plan
    return VarianceInferenceResult(
        statistic=cast(Literal["mean"], statistic),
        coordinate=coordinate,
        estimate=ci.estimate,
        variance=variance.entry(coordinate),
        lower=ci.lower,
        upper=ci.upper,
        level=ci.level,
        b=variance.plan.b,
        l=variance.plan.l,
        b_small=small.b if small else None,
        l_small=small.l if small else None,
        clipped=ci.clipped,
        rate=str(variance.plan.rate),
    )


def ols_result(
    fit: OlsFit,
    variance: VarianceEstimate,
    intervals: list[ConfidenceInterval],
    t_statistics: list[float | None],
    names: tuple[str, ...],
    target: int,
    mode: ScoreMode | str,
) -> OlsInferenceResult:
    small = variance.small_plan
    coefficients = [
        CoefficientResult(
            coordinate=j,
            name=names[j] if j < len(names) else f"x{j}",
            estimate=ci.estimate,
            lower=ci.lower,
            upper=ci.upper,
            t_statistic=t,
            clipped=ci.clipped,
        )
        for j, (ci, t) in enumerate(zip(intervals, t_statistics))
    ]
    return OlsInferenceResult(
        target=target,
        mode=ScoreMode(mode),
        beta_hat=[float(v) for v in fit.beta_hat],
        variance=[[float(v) for v in row] for row in variance.matrix],
        coefficients=coefficients,
        level=intervals[0].level if intervals else 0.95,
        b=variance.plan.b,
        l=variance.plan.l,
        b_small=small.b if small else None,
        l_small=small.l if small else None,
        bias_corrected=variance.corrected,
    )


def bandwidth_result(selection: SizeSelection) -> BandwidthResult:
    return BandwidthResult(
        l_opt=selection.l_opt,
        b=selection.b,
        l=selection.l,
        w_opt=selection.w_opt,
        iterations=list(selection.w_trace),
        floor_applied=selection.floor_applied,
        degenerate=selection.degenerate,
        coordinate=selection.coordinate,
    )


def emit_json(document: BaseModel) -> None:
    """Write a result document to stdout."""
    click.echo(document.model_dump_json(indent=2, by_alias=True))


def print_bandwidth_trace(selection: SizeSelection) -> None:
    """Print the plug-in iteration as a table."""
    table = Table(title="Window-length iteration")
    table.add_column("i", justify="right")
    table.add_column("w_i", justify="right")
    table.add_column("1/w_i", justify="right")
    for i, w in enumerate(selection.w_trace):
        table.add_row(str(i), f"{w:.6f}", f"{1 / w:.2f}")
    console.print(table)

    summary = f"l_opt = {selection.l_opt}  ->  (b, l) = ({selection.b}, {selection.l})"
    if selection.floor_applied:
        summary += "  [yellow](floor applied)[/yellow]"
    if selection.degenerate:
        summary += "  [red](degenerate denominator)[/red]"
    console.print(summary)


def _format_size(value: int | float | None, fixed: bool) -> str:
    if value is None:
        return "-"
    if fixed:
        return str(value)
    return f"~{value:g}"


def _format_coverage(row: CoverageRow, show_sizes: bool = False) -> str:
    if row.coverage is None:
        return "[dim]n/a[/dim]"
    text = f"{row.coverage:.3f}"
    if show_sizes and row.b is not None:
        fixed = row.size_rule == "fixed"
        text += f" [dim]({_format_size(row.b, fixed)}, {_format_size(row.l, fixed)})[/dim]"
    if row.n_failed:
        text += f" [yellow]({row.n_failed} failed)[/yellow]"
    return text


def print_coverage_report(report: CoverageReport) -> None:
    """Print coverage with one row per (rho, N, T) cell and one column per method.

    When methods in a cell ran with different (b, l), the shared size columns
    show "*" and each coverage entry carries its own sizes.
    """
    methods = list(dict.fromkeys(row.method for row in report.rows))
    cells: dict[tuple[float, int, int], dict[str, CoverageRow]] = {}
    for row in report.rows:
        cells.setdefault((row.rho, row.n_units, row.n_periods), {})[row.method.value] = row

    table = Table(title=f"Coverage probability, nominal {report.level:.0%} (seed {report.seed})")
    for name in ("rho", "N", "T", "b", "l"):
        table.add_column(name, justify="right")
    for method in methods:
        table.add_column(method.value, justify="right")

    for (rho, n_units, n_periods), by_method in cells.items():
        sized = [r for r in by_method.values() if r.b is not None]
        mixed = len({(r.b, r.l) for r in sized}) > 1
        if mixed:
            b_text = l_text = "*"
        else:
            first = sized[0] if sized else next(iter(by_method.values()))
            fixed = first.size_rule == "fixed"
            b_text, l_text = _format_size(first.b, fixed), _format_size(first.l, fixed)
        table.add_row(
            f"{rho:g}",
            str(n_units),
            str(n_periods),
            b_text,
            l_text,
            *(_format_coverage(by_method[m.value], show_sizes=mixed) for m in methods),
        )
    console.print(table)
