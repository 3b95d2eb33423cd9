"""OLS on panels and score-subsampling sandwich variances."""

from __future__ import annotations

import logging
import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .bandwidth import DEFAULT_ITERATIONS, DEFAULT_L_MIN, SizeSelection, select_sizes
from .models import (
    ConfidenceInterval,
    FloatArray,
    MissingTrueErrors,
    RateSpec,
    SingularDesign,
    SubsamplePlan,
    VarianceEstimate,
    ZeroVariance,
)
from .panel import PanelData
from .subsample import MeanStatistic, MomentStatistic, evaluate_subsamples
from .variance import normal_ci, sigma_hat, sigma_hat_bc

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12


class ScoreMode(str, Enum):
    """Which errors multiply the regressors in the score panel."""

    INFEASIBLE = "infeasible"
    FEASIBLE = "feasible"


class RegressionPanel(BaseModel):
    """Outcome y (d=1), regressors x (d=p) and, in simulations, true errors u."""

    model_config = ConfigDict(frozen=True)

    y: PanelData
    x: PanelData
    u: PanelData | None = None

    @model_validator(mode="after")
    def validate_shapes(self) -> RegressionPanel:
        shape = (self.y.n_units, self.y.n_periods)
        if self.y.dim != 1:
            raise ValueError(f"outcome must be scalar, got d={self.y.dim}")
        if (self.x.n_units, self.x.n_periods) != shape:
            raise ValueError("regressors and outcome must share N and T")
        if self.u is not None:
            if self.u.dim != 1:
                raise ValueError(f"true errors must be scalar, got d={self.u.dim}")
            if (self.u.n_units, self.u.n_periods) != shape:
                raise ValueError("true errors and outcome must share N and T")
        return self

    @classmethod
    def from_panel(
        cls, panel: PanelData, outcome: int = 0, intercept: bool = True
    ) -> RegressionPanel:
        """Split a panel into outcome column `outcome` and the remaining regressors."""
        if not 0 <= outcome < panel.dim:
            raise ValueError(f"outcome column {outcome} out of range for d={panel.dim}")
        regressors = [j for j in range(panel.dim) if j != outcome]
        if not regressors and not intercept:
            raise ValueError("regression needs at least one regressor")
        y = panel.select([outcome])
        if regressors:
            x_values = panel.select(regressors).values
            names = tuple(panel.variables[j] for j in regressors) if panel.variables else ()
        else:
            x_values = np.empty((panel.n_units, panel.n_periods, 0))
            names = ()
        if intercept:
            ones = np.ones((panel.n_units, panel.n_periods, 1))
            x_values = np.concatenate([ones, x_values], axis=2)
            names = ("const", *names) if names else ()
        x = PanelData(
            values=np.array(x_values, dtype=np.float64),
            unit_labels=panel.unit_labels,
            period_labels=panel.period_labels,
            variables=names,
        )
        return cls(y=y, x=x)

    @property
    def n_units(self) -> int:
        return self.y.n_units

    @property
    def n_periods(self) -> int:
        return self.y.n_periods

    @property
    def n_regressors(self) -> int:
        return self.x.dim

    def joined(self) -> PanelData:
        """[y, x] stacked along the coordinate axis, the input of OlsStatistic."""
        return PanelData(values=np.concatenate([self.y.values, self.x.values], axis=2))


class OlsFit(BaseModel):
    """Least-squares coefficients with the moment matrix and residuals."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    beta_hat: FloatArray
    phi_hat: FloatArray
    residuals: PanelData

    @model_validator(mode="after")
    def validate_fit(self) -> OlsFit:
        p = self.beta_hat.shape[0]
        if self.beta_hat.ndim != 1 or self.phi_hat.shape != (p, p):
            raise ValueError("beta_hat must be (p,) and phi_hat (p, p)")
        if not np.allclose(self.phi_hat, self.phi_hat.T):
            raise ValueError("phi_hat must be symmetric")
        self.beta_hat.setflags(write=False)
        self.phi_hat.setflags(write=False)
        return self

    @property
    def n_units(self) -> int:
        return self.residuals.n_units

    def phi_inverse(self) -> FloatArray:
        return _guarded_inverse(self.phi_hat)


def _moment_matrix(x: FloatArray) -> FloatArray:
    """(1/NT) sum X_nt X_nt' for x of shape (N, T, p)."""
    cells = x.shape[0] * x.shape[1]
    phi: FloatArray = np.einsum("ntp,ntq->pq", x, x) / cells
    return (phi + phi.T) / 2


def _guarded_inverse(matrix: FloatArray) -> FloatArray:
    singular_values = np.linalg.svd(matrix, compute_uv=False)
    if singular_values[-1] <= 0 or singular_values[0] / singular_values[-1] > MAX_CONDITION:
        raise SingularDesign(
            f"regressor moment matrix is singular or ill-conditioned "
            f"(singular values {singular_values[0]:.3g} .. {singular_values[-1]:.3g})"
        )
    inverse: FloatArray = np.linalg.inv(matrix)
    return (inverse + inverse.T) / 2


def ols_fit(data: RegressionPanel) -> OlsFit:
    """beta = phi^-1 (1/NT) sum X_nt Y_nt with residuals Y - X'beta."""
    x = data.x.values
    y = data.y.values[:, :, 0]
    phi = _moment_matrix(x)
    _guarded_inverse(phi)
    cross = np.einsum("ntp,nt->p", x, y) / (data.n_units * data.n_periods)
    beta = np.linalg.solve(phi, cross)
    residuals = y - np.einsum("ntp,p->nt", x, beta)
    return OlsFit(
        beta_hat=np.asarray(beta, dtype=np.float64),
        phi_hat=phi,
        residuals=PanelData.from_array(residuals, variables=["residual"]),
    )


def score_panel(
    data: RegressionPanel, fit: OlsFit, mode: ScoreMode | str = ScoreMode.FEASIBLE
) -> PanelData:
    """X_nt * U_nt (infeasible) or X_nt * residual_nt (feasible), shape (N, T, p)."""
    mode = ScoreMode(mode)
    if mode == ScoreMode.INFEASIBLE:
        if data.u is None:
            raise MissingTrueErrors("infeasible scores need the true errors u")
        errors = data.u.values
    else:
        errors = fit.residuals.values
    return PanelData.from_array(
        data.x.values * errors,
        variables=[f"score_{j}" for j in range(data.n_regressors)],
    )


class OlsStatistic(MomentStatistic):
    """OLS coefficients on a sub-panel of stacked [y, x] values.

    Moments per cell are vec(x x') followed by x * y.
    """

    def __init__(self, n_regressors: int) -> None:
        self.n_regressors = n_regressors

    def moments(self, values: FloatArray) -> FloatArray:
        y, x = values[..., :1], values[..., 1:]
        outer = x[..., :, None] * x[..., None, :]
        flat_outer = outer.reshape(*x.shape[:-1], self.n_regressors**2)
        result: FloatArray = np.concatenate([flat_outer, x * y], axis=-1)
        return result

    def finalize(self, mean_moments: FloatArray) -> FloatArray:
        p = self.n_regressors
        phi = mean_moments[..., : p * p].reshape(*mean_moments.shape[:-1], p, p)
        cross = mean_moments[..., p * p :]
        result: FloatArray = np.linalg.solve(phi, cross[..., None])[..., 0]
        return result


def check_size_conditions(plan: SubsamplePlan, n_units: int, n_periods: int) -> bool:
    """Whether b <= sqrt(N) and l <= sqrt(T); logs a warning otherwise."""
    ok = plan.b <= math.sqrt(n_units) and plan.l <= math.sqrt(n_periods)
    if not ok:
        logger.warning(
            "Subsample sizes (b=%d, l=%d) exceed (sqrt(N), sqrt(T)) = (%.1f, %.1f); "
            "the sandwich variance may be unreliable",
            plan.b,
            plan.l,
            math.sqrt(n_units),
            math.sqrt(n_periods),
        )
    return ok


def sandwich_variance(
    data: RegressionPanel,
    fit: OlsFit,
    plan: SubsamplePlan,
    mode: ScoreMode | str = ScoreMode.FEASIBLE,
    bias_correct: bool = False,
    small_plan: SubsamplePlan | None = None,
    warn_sizes: bool = True,
) -> VarianceEstimate:
    """phi^-1 Sigma phi^-1 with Sigma the subsampling variance of the mean score.

    The score mean converges at rate sqrt(N), so the plan's rate is replaced
    by m**(1/2). With `bias_correct` the correction is applied to Sigma before
    sandwiching.
    """
    root_n = RateSpec.root_units()
    plan = plan.with_rate(root_n)
    if warn_sizes:
        check_size_conditions(plan, data.n_units, data.n_periods)
    phi_inv = fit.phi_inverse()
    scores = score_panel(data, fit, mode)
    stats = evaluate_subsamples(scores, plan, MeanStatistic())

    if bias_correct:
        small = (small_plan or plan.smaller()).with_rate(root_n)
        small_stats = evaluate_subsamples(scores, small, MeanStatistic())
        sigma = sigma_hat_bc(stats, small_stats)
    else:
        sigma = sigma_hat(stats)

    def sandwich(matrix: FloatArray) -> FloatArray:
        result: FloatArray = phi_inv @ matrix @ phi_inv
        return (result + result.T) / 2

    bias = sandwich(sigma.bias_estimate) if sigma.bias_estimate is not None else None
    return VarianceEstimate(
        matrix=sandwich(sigma.matrix),
        plan=plan,
        corrected=sigma.corrected,
        small_plan=sigma.small_plan,
        correction_factor=sigma.correction_factor,
        bias_estimate=bias,
    )


def t_statistic(
    fit: OlsFit, variance: VarianceEstimate, coordinate: int, null_value: float = 0.0
) -> float:
    """sqrt(N) * (beta_j - null) / sqrt(V_jj)."""
    v_jj = variance.entry(coordinate)
    if v_jj <= 0:
        raise ZeroVariance(f"V[{coordinate},{coordinate}] = {v_jj:.6g} is not positive")
    return math.sqrt(fit.n_units) * (float(fit.beta_hat[coordinate]) - null_value) / math.sqrt(v_jj)


def coefficient_intervals(
    fit: OlsFit, variance: VarianceEstimate, level: float = 0.95
) -> list[ConfidenceInterval]:
    """Normal intervals beta_j +- z * sqrt(V_jj) / sqrt(N) for every coefficient."""
    tau_full = math.sqrt(fit.n_units)
    return [
        normal_ci(fit.beta_hat, variance, tau_full, level, coordinate=j)
        for j in range(fit.beta_hat.shape[0])
    ]


def select_regression_sizes(
    data: RegressionPanel,
    fit: OlsFit,
    mode: ScoreMode | str = ScoreMode.FEASIBLE,
    l_min: int = DEFAULT_L_MIN,
    n_iterations: int = DEFAULT_ITERATIONS,
) -> SizeSelection:
    """Data-driven (b, l) from the score panel, largest l_opt over coordinates.

    Constant score coordinates are skipped when another coordinate varies.
    """
    scores = score_panel(data, fit, mode)
    varying = [j for j in range(scores.dim) if np.ptp(scores.column(j)) > 0]
    return select_sizes(scores, l_min, n_iterations, coordinates=varying or None)
