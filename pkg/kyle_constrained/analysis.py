# Copyright 2024 (C) The kyle-constrained authors
#
# This file is part of kyle-constrained, distributed under the BSD-3-Clause
# license.
"""
Turn simulated batches and closed-form curves into verdicts.

This module compares Monte Carlo moments with their closed-form (or oracle)
targets, estimates the scaled autocorrelation of aggregate holdings, detects
U-shaped curves and prepares the series of the four equilibrium panels
(price impact, expected order rate, scaled autocorrelation and remaining
variance).

All ensemble means are compensated sums over arrays stored in path order,
so that every estimate is reproducible bit-by-bit from `(seed, config)`.
"""
import logging
import math
from typing import Literal
from typing import Optional
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel
from pydantic import validator

from kyle_constrained.calibrate import build_solution
from kyle_constrained.closed_form import block_fraction_closed_form
from kyle_constrained.closed_form import EquilibriumSolution
from kyle_constrained.closed_form import f_of_t
from kyle_constrained.closed_form import fprime_of_t
from kyle_constrained.closed_form import g_of_t
from kyle_constrained.closed_form import insider_expected_cost
from kyle_constrained.closed_form import lambda_of_t
from kyle_constrained.closed_form import ModelParams
from kyle_constrained.closed_form import remaining_variance
from kyle_constrained.closed_form import scaled_autocorrelation
from kyle_constrained.closed_form import sigma1_of_t
from kyle_constrained.closed_form import sigma2_of_t
from kyle_constrained.closed_form import sigma4_of_t
from kyle_constrained.oracle import integrate_sigma3
from kyle_constrained.oracle import OdeSolution
from kyle_constrained.simulate import autocorrelation_indices
from kyle_constrained.simulate import PathBatch
from kyle_constrained.simulate import resolve_autocorrelation


logger = logging.getLogger(__name__)

Z_THRESHOLD = 3.0
RATIO_CUTOFF = 0.1
N_BATCH_MEANS = 20
ALIGNMENT_RTOL = 1e-9
FIGURE_TRUNCATION = 1e-3
FIGURE_SIGMA3_STEPS = 20_000
MIN_U_SHAPE_SAMPLES = 10

REPORT_COLUMNS = [
    "checkpoint",
    "reference_checkpoint",
    "moment",
    "estimate",
    "stderr",
    "target",
    "z",
    "gated",
    "passed",
]
AUTOCORRELATION_COLUMNS = [
    "t",
    "h",
    "raw",
    "scaled",
    "stderr",
    "target",
    "z",
]
TREND_COLUMNS = [
    "t",
    "h_coarse",
    "h_fine",
    "extrapolated",
    "stderr",
    "target",
    "z",
    "passed",
]
SHAPE_CHECK_COLUMNS = ["figure", "column", "check", "passed", "detail"]
FIGURE_IDS = ("1A", "1B", "1C", "1D")


class MisalignedCheckpointsError(ValueError):
    """
    Raised when checkpoint times are not points of the reference curve grid.
    """

    pass


class MissingIncrementsError(ValueError):
    """
    Raised when an autocorrelation window was not recorded in the batch.
    """

    pass


def mean_and_stderr(samples: np.ndarray) -> tuple[float, float]:
    """
    Compensated sample mean and its standard error.

    The standard error is `NaN` for fewer than two samples.
    """
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    if n == 0:
        raise ValueError("Cannot average an empty sample")
    mean = math.fsum(samples) / n
    if n < 2:
        return mean, math.nan
    variance = math.fsum((samples - mean) ** 2) / (n - 1)
    return mean, math.sqrt(variance / n)


def z_score(estimate: float, stderr: float, target: float) -> float:
    """
    `(estimate - target) / stderr`, with `0` for an exact match at zero
    standard error.
    """
    if estimate == target:
        return 0.0
    if stderr > 0.0:
        return (estimate - target) / stderr
    if stderr == 0.0:
        return math.copysign(math.inf, estimate - target)
    return math.nan


class MomentRow(BaseModel):
    """
    One moment comparison.

    Attributes:
        checkpoint: Time of the moment (`T` for terminal rows).
        reference_checkpoint: Earlier time, for two-time moments.
        moment: Moment name.
        estimate: Monte Carlo estimate.
        stderr: Standard error of the estimate.
        target: Closed-form or oracle target (`NaN` for diagnostics).
        z: z-score of the estimate.
        gated: Whether the row enters the overall verdict.
        passed: Whether `|z|` is within the threshold (or, for diagnostics,
            whether the estimate is finite).
    """

    checkpoint: float
    reference_checkpoint: Optional[float] = None
    moment: str
    estimate: float
    stderr: float
    target: float
    z: float
    gated: bool = True
    passed: bool

    class Config:
        allow_mutation = False


class MomentReport(BaseModel):
    """
    Moment comparisons of a simulated batch.

    Attributes:
        rows: Individual comparisons.
        z_threshold: Band applied to gated rows.
    """

    rows: list[MomentRow]
    z_threshold: float = Z_THRESHOLD

    class Config:
        allow_mutation = False

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows if row.gated)

    @property
    def failing(self) -> list[MomentRow]:
        return [row for row in self.rows if row.gated and not row.passed]

    def row(
        self,
        moment: str,
        checkpoint: float,
        reference_checkpoint: Optional[float] = None,
    ) -> MomentRow:
        for row in self.rows:
            if (
                row.moment == moment
                and row.checkpoint == checkpoint
                and row.reference_checkpoint == reference_checkpoint
            ):
                return row
        raise KeyError(f"No row for {moment=} at {checkpoint=}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [row.dict() for row in self.rows], columns=REPORT_COLUMNS
        )


def _gated_row(
    *,
    checkpoint: float,
    moment: str,
    samples: np.ndarray,
    target: float,
    z_threshold: float,
    reference_checkpoint: Optional[float] = None,
) -> MomentRow:
    estimate, stderr = mean_and_stderr(samples)
    z = z_score(estimate, stderr, target)
    return MomentRow(
        checkpoint=checkpoint,
        reference_checkpoint=reference_checkpoint,
        moment=moment,
        estimate=estimate,
        stderr=stderr,
        target=target,
        z=z,
        gated=True,
        passed=bool(abs(z) <= z_threshold),
    )


def _diagnostic_row(
    *, checkpoint: float, moment: str, samples: np.ndarray, target: float
) -> MomentRow:
    estimate, stderr = mean_and_stderr(samples)
    return MomentRow(
        checkpoint=checkpoint,
        moment=moment,
        estimate=estimate,
        stderr=stderr,
        target=target,
        z=z_score(estimate, stderr, target) if math.isfinite(target) else 0.0,
        gated=False,
        passed=bool(math.isfinite(estimate)),
    )


def curve_value_at(
    curve: OdeSolution, component: str, times: Sequence[float]
) -> np.ndarray:
    """
    Values of an oracle component at times that must be grid points.

    Raises:
        MisalignedCheckpointsError:
            If a time is farther than `1e-9 T` from every grid point.
    """
    grid = curve.grid
    values = curve.component(component)
    tolerance = ALIGNMENT_RTOL * max(grid[-1], 1.0)
    result = []
    for t in times:
        index = int(np.argmin(np.abs(grid - t)))
        if abs(grid[index] - t) > tolerance:
            msg = (
                f"Time {t} is not on the {component} curve grid "
                f"(closest point {grid[index]}); use an oracle step count "
                "that is a multiple of the simulation step count"
            )
            logger.error(msg)
            raise MisalignedCheckpointsError(msg)
        result.append(values[index])
    return np.asarray(result)


def ratio_mask(batch: PathBatch) -> np.ndarray:
    """
    Paths entering ratio estimators, `|a| > 0.1 sigma_a`.
    """
    return np.abs(batch.a_tilde) > RATIO_CUTOFF * batch.params.sigma_a


def compare_moments(
    batch: PathBatch,
    sol: EquilibriumSolution,
    sigma3_curve: OdeSolution,
    *,
    z_threshold: float = Z_THRESHOLD,
) -> MomentReport:
    """
    Compare Monte Carlo moments of a batch with their targets.

    At each checkpoint `t`, the gated rows are `sigma1` (`E[X^2]`),
    `sigma2` (`E[(v-P)X]`), `sigma3` (`E[Q^2]`, oracle target), `sigma4`
    (`E[(v-P)^2]`), `qx` (`E[QX] = 0`), `price_mean` (`E[P] = 0`),
    `remaining_variance` and the conditional-mean ratios `theta_over_a` and
    `q_over_a` (targets `f(t)` and `g(t)`). Every checkpoint pair `s < t`
    adds a `price_martingale` row for `E[(P_t - P_s) P_s] = 0`. Terminal
    rows compare the block fraction and the insider value with their closed
    forms; `E[theta^2]`, `E[X_{T-}^2]` and `E[(P_T - P_{T-})^2]` are
    reported as ungated diagnostics.

    Args:
        batch: Simulated batch.
        sol: Equilibrium the batch was simulated from.
        sigma3_curve: Oracle `Sigma3` solution on a grid containing every
            checkpoint.
        z_threshold: Band applied to gated rows.

    Raises:
        MisalignedCheckpointsError: If a checkpoint is not a point of the
            `Sigma3` curve grid.
    """
    params = batch.params
    times = batch.checkpoint_times
    sigma3_targets = curve_value_at(sigma3_curve, "Sigma3", times)
    mask = ratio_mask(batch)
    a = batch.a_tilde
    v = batch.v_tilde
    a_scale = params.rho * params.sigma_v / params.sigma_a

    rows = []
    for k, t in enumerate(times):
        state = batch.state_at(k)
        X = state.X
        gated = dict(checkpoint=t, z_threshold=z_threshold)
        rows += [
            _gated_row(
                moment="sigma1",
                samples=X * X,
                target=float(sigma1_of_t(sol, t)),
                **gated,
            ),
            _gated_row(
                moment="sigma2",
                samples=(v - state.P) * X,
                target=float(sigma2_of_t(sol, t)),
                **gated,
            ),
            _gated_row(
                moment="sigma3",
                samples=state.Q * state.Q,
                target=float(sigma3_targets[k]),
                **gated,
            ),
            _gated_row(
                moment="sigma4",
                samples=(v - state.P) ** 2,
                target=float(sigma4_of_t(sol, t)),
                **gated,
            ),
            _gated_row(moment="qx", samples=state.Q * X, target=0.0, **gated),
            _gated_row(
                moment="price_mean", samples=state.P, target=0.0, **gated
            ),
            _gated_row(
                moment="remaining_variance",
                samples=(a_scale * a - state.P) ** 2,
                target=float(remaining_variance(sol, t)),
                **gated,
            ),
            _diagnostic_row(
                checkpoint=t,
                moment="theta_sq",
                samples=state.theta**2,
                target=math.nan,
            ),
            _gated_row(
                moment="theta_over_a",
                samples=state.theta[mask] / a[mask],
                target=float(f_of_t(sol, t)),
                **gated,
            ),
            _gated_row(
                moment="q_over_a",
                samples=state.Q[mask] / a[mask],
                target=float(g_of_t(sol, t)),
                **gated,
            ),
        ]
        for j in range(k):
            P_s = batch.states["P"][:, j]
            rows.append(
                _gated_row(
                    moment="price_martingale",
                    samples=(state.P - P_s) * P_s,
                    target=0.0,
                    reference_checkpoint=times[j],
                    **gated,
                )
            )

    T = sol.T
    terminal = batch.terminal
    rows += [
        _gated_row(
            checkpoint=T,
            moment="block_fraction",
            samples=terminal["block"][mask] / a[mask],
            target=block_fraction_closed_form(sol),
            z_threshold=z_threshold,
        ),
        _gated_row(
            checkpoint=T,
            moment="insider_value",
            samples=batch.insider_cost,
            target=insider_expected_cost(sol),
            z_threshold=z_threshold,
        ),
        _diagnostic_row(
            checkpoint=T,
            moment="x_terminal_sq",
            samples=terminal["X_Tminus"] ** 2,
            target=0.0,
        ),
        _diagnostic_row(
            checkpoint=T,
            moment="price_jump_sq",
            samples=terminal["price_jump"] ** 2,
            target=0.0,
        ),
    ]
    report = MomentReport(rows=rows, z_threshold=z_threshold)
    for row in report.failing:
        logger.warning(
            f"Moment {row.moment} at t={row.checkpoint} outside the "
            f"{z_threshold}-sigma band ({row.estimate=}, {row.target=}, "
            f"{row.z=})"
        )
    logger.info(
        f"Compared {len(rows)} moments, passed={report.passed} "
        f"({len(report.failing)} failing)"
    )
    return report


def insider_value(batch: PathBatch, sol: EquilibriumSolution) -> MomentRow:
    """
    Monte Carlo insider trading cost against `I sigma_a^2 + K(0)`.
    """
    return _gated_row(
        checkpoint=sol.T,
        moment="insider_value",
        samples=batch.insider_cost,
        target=insider_expected_cost(sol),
        z_threshold=Z_THRESHOLD,
    )


class AutocorrelationEstimate(BaseModel):
    """
    Finite-lag autocorrelation of aggregate-holdings increments.

    Attributes:
        t: Snapped center time.
        h: Snapped lag.
        raw: Mean of `(Y_t - Y_{t-h}) (Y_{t+h} - Y_t)`.
        scaled: `raw` divided by both increment standard deviations and by
            `h`.
        stderr: Batch-means standard error of `scaled`.
    """

    t: float
    h: float
    raw: float
    scaled: float
    stderr: float

    class Config:
        allow_mutation = False


def _scaled_correlation(d1: np.ndarray, d2: np.ndarray, h: float) -> float:
    n = len(d1)
    raw = math.fsum(d1 * d2) / n
    m1 = math.fsum(d1) / n
    m2 = math.fsum(d2) / n
    sd1 = math.sqrt(math.fsum((d1 - m1) ** 2) / (n - 1))
    sd2 = math.sqrt(math.fsum((d2 - m2) ** 2) / (n - 1))
    return raw / (sd1 * sd2) / h


def estimate_autocorrelation(
    batch: PathBatch, t: float, h: float
) -> AutocorrelationEstimate:
    """
    Estimate the scaled autocorrelation of aggregate holdings at `(t, h)`.

    Args:
        batch: Batch simulated with `record_increments=True`.
        t: Center time.
        h: Lag, rounded to a multiple of the time step.

    Returns:
        The estimate, with a standard error from 20 contiguous batch means.

    Raises:
        MissingIncrementsError: If `Y` was not recorded at `t-h`, `t`,
            `t+h`.
    """
    config = batch.config
    T = batch.dt * config.n_steps
    try:
        indices = autocorrelation_indices(t, h, T, config.n_steps)
    except ValueError as e:
        raise MissingIncrementsError(str(e))
    missing = [i for i in indices if i not in batch.y_record_indices]
    if missing:
        msg = (
            f"Aggregate holdings were not recorded at grid indices {missing} "
            f"needed for ({t=}, {h=})"
        )
        logger.error(msg)
        raise MissingIncrementsError(msg)
    if batch.n_paths < 2 * N_BATCH_MEANS:
        msg = (
            f"At least {2 * N_BATCH_MEANS} paths are needed for an "
            f"autocorrelation estimate (given {batch.n_paths})"
        )
        logger.error(msg)
        raise ValueError(msg)

    lo, mid, hi = (batch.y_record_indices.index(i) for i in indices)
    Y = batch.y_records
    d1 = Y[:, mid] - Y[:, lo]
    d2 = Y[:, hi] - Y[:, mid]
    h_snapped = (indices[2] - indices[1]) * batch.dt
    raw = math.fsum(d1 * d2) / batch.n_paths
    scaled = _scaled_correlation(d1, d2, h_snapped)
    groups = np.array_split(np.arange(batch.n_paths), N_BATCH_MEANS)
    group_values = np.array(
        [_scaled_correlation(d1[g], d2[g], h_snapped) for g in groups]
    )
    _, stderr = mean_and_stderr(group_values)
    return AutocorrelationEstimate(
        t=indices[1] * batch.dt,
        h=h_snapped,
        raw=raw,
        scaled=scaled,
        stderr=stderr,
    )


class AutocorrelationTable(BaseModel):
    """
    Autocorrelation estimates at every configured lag and their
    Richardson extrapolations.

    Attributes:
        estimates: One row per `(t, h)`, columns `AUTOCORRELATION_COLUMNS`.
        trend: One row per pair of consecutive lags, columns
            `TREND_COLUMNS`.
    """

    estimates: pd.DataFrame
    trend: pd.DataFrame

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @property
    def trend_ok(self) -> bool:
        return bool(self.trend["passed"].all())


def autocorrelation_table(
    batch: PathBatch,
    sol: EquilibriumSolution,
    sigma3_curve: OdeSolution,
    *,
    z_threshold: float = Z_THRESHOLD,
) -> AutocorrelationTable:
    """
    Estimate the scaled autocorrelation at every configured `(t, h)`.

    For consecutive lags `h_c > h_f` with ratio `q = h_c / h_f`, the first
    order bias is removed by `(q est(h_f) - est(h_c)) / (q - 1)`, i.e.
    `2 est(h/2) - est(h)` for halved lags. The trend toward the small-lag
    limit passes when the extrapolation lies within `z_threshold` combined
    standard errors of the target.
    """
    times, lags = resolve_autocorrelation(batch.config, sol.T)
    lags = sorted(lags, reverse=True)
    estimates = []
    trend = []
    for t in times:
        row_estimates = []
        for h in lags:
            est = estimate_autocorrelation(batch, t, h)
            # Lags snapping onto the same grid multiple are reported once
            if all(est.h != other.h for other in row_estimates):
                row_estimates.append(est)
        t_snapped = row_estimates[0].t
        sigma3 = curve_value_at(sigma3_curve, "Sigma3", [t_snapped])[0]
        target = float(scaled_autocorrelation(sol, t_snapped, sigma3))
        for est in row_estimates:
            estimates.append(
                dict(
                    t=est.t,
                    h=est.h,
                    raw=est.raw,
                    scaled=est.scaled,
                    stderr=est.stderr,
                    target=target,
                    z=z_score(est.scaled, est.stderr, target),
                )
            )
        for coarse, fine in zip(row_estimates[:-1], row_estimates[1:]):
            q = coarse.h / fine.h
            extrapolated = (q * fine.scaled - coarse.scaled) / (q - 1.0)
            stderr = math.hypot(q * fine.stderr, coarse.stderr) / (q - 1.0)
            z = z_score(extrapolated, stderr, target)
            trend.append(
                dict(
                    t=t_snapped,
                    h_coarse=coarse.h,
                    h_fine=fine.h,
                    extrapolated=extrapolated,
                    stderr=stderr,
                    target=target,
                    z=z,
                    passed=bool(abs(z) <= z_threshold),
                )
            )
    return AutocorrelationTable(
        estimates=pd.DataFrame(estimates, columns=AUTOCORRELATION_COLUMNS),
        trend=pd.DataFrame(trend, columns=TREND_COLUMNS),
    )


class UShapeResult(BaseModel):
    """
    Outcome of `detect_u_shape`.

    Attributes:
        is_u: Whether slopes go from negative to positive exactly once.
        argmin_t: Time of the sampled minimum (`NaN` if not U-shaped).
    """

    is_u: bool
    argmin_t: float


def detect_u_shape(t: np.ndarray, values: np.ndarray) -> UShapeResult:
    """
    Sign-pattern test for U-shaped sampled curves.

    The finite-difference slopes must be negative on an initial segment,
    positive on a final segment, and change sign exactly once.

    Args:
        t: Sample times (at least 10, increasing).
        values: Sampled curve.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(t) < MIN_U_SHAPE_SAMPLES or len(t) != len(values):
        raise ValueError(
            f"detect_u_shape needs >= {MIN_U_SHAPE_SAMPLES} samples and "
            f"matching lengths (given {len(t)} and {len(values)})"
        )
    signs = np.sign(np.diff(values))
    signs = signs[signs != 0]
    changes = int(np.count_nonzero(np.diff(signs)))
    is_u = bool(
        len(signs) > 1 and signs[0] < 0 and signs[-1] > 0 and changes == 1
    )
    argmin_t = float(t[int(np.argmin(values))]) if is_u else math.nan
    return UShapeResult(is_u=is_u, argmin_t=argmin_t)


class BlockFractionEstimate(BaseModel):
    """
    Expected terminal block as a fraction of the target.

    Attributes:
        closed_form: Closed-form fraction, in `(0, 1)`.
        estimate: Monte Carlo mean of `block / a` over `|a| > 0.1 sigma_a`.
        stderr: Standard error of the estimate.
        z: z-score of the estimate.
    """

    closed_form: float
    estimate: Optional[float] = None
    stderr: Optional[float] = None
    z: Optional[float] = None


def block_fraction(
    sol: EquilibriumSolution, batch: Optional[PathBatch] = None
) -> BlockFractionEstimate:
    """
    Closed-form block fraction and, if a batch is given, its Monte Carlo
    counterpart.
    """
    closed_form = block_fraction_closed_form(sol)
    if batch is None:
        return BlockFractionEstimate(closed_form=closed_form)
    mask = ratio_mask(batch)
    estimate, stderr = mean_and_stderr(
        batch.terminal["block"][mask] / batch.a_tilde[mask]
    )
    return BlockFractionEstimate(
        closed_form=closed_form,
        estimate=estimate,
        stderr=stderr,
        z=z_score(estimate, stderr, closed_form),
    )


class FigureSeries(BaseModel):
    """
    Data of one equilibrium panel.

    Attributes:
        figure_id: Panel identifier.
        quantity: Name of the plotted quantity.
        x: Time grid.
        columns: One curve per `sigma_a` scenario, keyed `sigma_a=<value>`.
        sigma_a: Scenario values, in column order.
    """

    figure_id: Literal["1A", "1B", "1C", "1D"]
    quantity: str
    x: np.ndarray
    columns: dict[str, np.ndarray]
    sigma_a: list[float]

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("columns")
    def finite_columns(cls, v, values):
        """
        Check that every column is finite and matches the grid.
        """
        x = values.get("x")
        for name, column in v.items():
            if x is not None and len(column) != len(x):
                raise ValueError(f"Column {name} does not match the grid")
            if not np.all(np.isfinite(column)):
                raise ValueError(f"Column {name} has non-finite values")
        return v

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.x, **self.columns})
        return frame[["t", *self.columns.keys()]]


def column_name(sigma_a: float) -> str:
    return f"sigma_a={sigma_a:g}"


def figure_grid(T: float, n_grid: int) -> np.ndarray:
    """
    Uniform grid on `[0, T - 1e-3]` (`[0, 0.99 T]` for `T < 0.1`).
    """
    if n_grid < MIN_U_SHAPE_SAMPLES:
        raise ValueError(
            f"Figure grids need at least {MIN_U_SHAPE_SAMPLES} points "
            f"({n_grid=})"
        )
    return np.linspace(0.0, T - min(FIGURE_TRUNCATION, 0.01 * T), n_grid)


def figure_series(
    params_base: ModelParams,
    sigma_a_list: Sequence[float],
    n_grid: int,
    *,
    sigma3_steps: int = FIGURE_SIGMA3_STEPS,
) -> list[FigureSeries]:
    """
    Series of the four equilibrium panels, one column per `sigma_a`.

    The panels are `1A` price impact `lambda(t)`, `1B` expected order rate
    per unit of target `f'(t)`, `1C` small-lag scaled autocorrelation
    (with `Sigma3` from the ODE oracle) and `1D` remaining variance. Curves
    are sampled on `[0, T - 1e-3]`.

    Args:
        params_base: Parameters shared by all scenarios.
        sigma_a_list: Target volatilities, one column each.
        n_grid: Number of grid points.
        sigma3_steps: Oracle steps for `Sigma3`.

    Raises:
        CalibrationError: Propagated from calibration of any scenario.
    """
    if len(sigma_a_list) == 0:
        raise ValueError("sigma_a_list must not be empty")
    x = figure_grid(params_base.T, n_grid)
    panels: dict[str, dict[str, np.ndarray]] = {fid: {} for fid in FIGURE_IDS}
    for sigma_a in sigma_a_list:
        params = params_base.copy(update=dict(sigma_a=float(sigma_a)))
        sol = build_solution(params)
        name = column_name(sigma_a)
        sigma3_curve = integrate_sigma3(sol, sigma3_steps)
        sigma3 = np.maximum(
            np.interp(x, sigma3_curve.grid, sigma3_curve.component("Sigma3")),
            0.0,
        )
        panels["1A"][name] = np.asarray(lambda_of_t(sol, x))
        panels["1B"][name] = np.asarray(fprime_of_t(sol, x))
        panels["1C"][name] = np.asarray(scaled_autocorrelation(sol, x, sigma3))
        panels["1D"][name] = np.asarray(remaining_variance(sol, x))
        logger.info(f"Computed figure columns for {sigma_a=}")
    quantities = {
        "1A": "lambda",
        "1B": "fprime",
        "1C": "scaled_autocorrelation",
        "1D": "remaining_variance",
    }
    return [
        FigureSeries(
            figure_id=fid,
            quantity=quantities[fid],
            x=x,
            columns=panels[fid],
            sigma_a=[float(s) for s in sigma_a_list],
        )
        for fid in FIGURE_IDS
    ]


def _shape_check(
    series: FigureSeries, name: str, column: np.ndarray
) -> tuple[str, bool, str]:
    if series.figure_id == "1A":
        max_slope = float(np.max(np.diff(column)))
        return "strictly_decreasing", max_slope < 0.0, f"{max_slope=}"
    if series.figure_id == "1B":
        result = detect_u_shape(series.x, column)
        return "u_shape", result.is_u, f"argmin_t={result.argmin_t}"
    if series.figure_id == "1C":
        min_value = float(np.min(column))
        return "strictly_positive", min_value > 0.0, f"{min_value=}"
    max_slope = float(np.max(np.diff(column)))
    last = float(column[-1])
    return (
        "decreasing_to_positive",
        max_slope < 0.0 and last > 0.0,
        f"{max_slope=}, {last=}",
    )


def check_figure_shapes(series_list: Sequence[FigureSeries]) -> pd.DataFrame:
    """
    Run the qualitative assertions of every panel.

    Each column is checked for its panel's shape (`1A` strictly decreasing,
    `1B` U-shaped, `1C` strictly positive, `1D` strictly decreasing with a
    positive last value). For each panel, the values at `t = 0` must also be
    (non-strictly) monotone in `sigma_a`.

    Returns:
        A table with columns `SHAPE_CHECK_COLUMNS`.
    """
    rows = []
    for series in series_list:
        for name, column in series.columns.items():
            check, passed, detail = _shape_check(series, name, column)
            rows.append(
                dict(
                    figure=series.figure_id,
                    column=name,
                    check=check,
                    passed=bool(passed),
                    detail=detail,
                )
            )
        order = np.argsort(series.sigma_a, kind="stable")
        initial = np.array(
            [column[0] for column in series.columns.values()]
        )[order]
        steps = np.diff(initial)
        monotone = bool(np.all(steps >= 0.0) or np.all(steps <= 0.0))
        rows.append(
            dict(
                figure=series.figure_id,
                column="all",
                check="monotone_in_sigma_a_at_t0",
                passed=monotone,
                detail=f"initial values {initial.tolist()}",
            )
        )
    frame = pd.DataFrame(rows, columns=SHAPE_CHECK_COLUMNS)
    for row in frame.loc[~frame["passed"]].itertuples():
        logger.warning(
            f"Figure {row.figure} column {row.column} failed {row.check} "
            f"({row.detail})"
        )
    return frame
