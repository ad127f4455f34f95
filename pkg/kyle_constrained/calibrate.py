# Copyright 2024 (C) The kyle-constrained authors
#
# This file is part of kyle-constrained, distributed under the BSD-3-Clause
# license.
"""
Calibration of `r0` (solving `tau(r0) = T`) and sampling of coefficient
curves on uniform time grids.
"""
import logging
import math
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel
from pydantic import Field
from pydantic import validator

from kyle_constrained.closed_form import _alpha
from kyle_constrained.closed_form import _beta
from kyle_constrained.closed_form import _check_time
from kyle_constrained.closed_form import _f
from kyle_constrained.closed_form import _g
from kyle_constrained.closed_form import _h
from kyle_constrained.closed_form import _J
from kyle_constrained.closed_form import _lambda
from kyle_constrained.closed_form import _r
from kyle_constrained.closed_form import _remaining_variance
from kyle_constrained.closed_form import _sigma1
from kyle_constrained.closed_form import _sigma2
from kyle_constrained.closed_form import _sigma4
from kyle_constrained.closed_form import EquilibriumSolution
from kyle_constrained.closed_form import I_from_r0
from kyle_constrained.closed_form import K_of_t
from kyle_constrained.closed_form import ModelParams
from kyle_constrained.closed_form import tau
from kyle_constrained.closed_form import tau_prime


logger = logging.getLogger(__name__)

MAX_BRACKET_STEPS = 200
MAX_ITERATIONS = 200
BISECTION_RTOL = 1e-8

GRID_COLUMNS = [
    "t",
    "r",
    "Sigma1",
    "Sigma2",
    "Sigma4",
    "lambda",
    "mu",
    "beta",
    "s",
    "alpha",
    "J",
    "K",
    "f",
    "g",
    "fprime",
    "remaining_variance",
]


class CalibrationError(RuntimeError):
    """
    Raised when `tau(x) = T` cannot be bracketed or solved.
    """

    pass


class CalibrationResult(BaseModel):
    """
    Outcome of `calibrate_r0`.

    Attributes:
        r0: Calibrated initial condition.
        residual: `|tau(r0) - T|`.
        iterations: Number of bisection and Newton iterations.
        bracket: Final bracketing interval `(lo, hi)` around the root.
    """

    r0: float = Field(..., gt=0.0)
    residual: float
    iterations: int
    bracket: tuple[float, float]

    class Config:
        allow_mutation = False

    @validator("bracket")
    def ordered_bracket(cls, v, values):
        """
        Check that the bracket is ordered and contains `r0`.
        """
        lo, hi = v
        if lo > hi:
            raise ValueError(f"Bracket is not ordered ({lo=}, {hi=})")
        r0 = values.get("r0")
        if r0 is not None and not (lo <= r0 <= hi):
            raise ValueError(f"{r0=} lies outside of bracket ({lo}, {hi})")
        return v


def _residual(x: float, params: ModelParams) -> float:
    if not (0.0 < x < math.inf):
        msg = (
            f"Bracket search for r0 left the floating-point range ({x=}); "
            f"parameters are too extreme ({params=})"
        )
        logger.error(msg)
        raise CalibrationError(msg)
    value = float(tau(x, params)) - params.T
    if not math.isfinite(value):
        msg = f"tau({x}) is not finite for {params=}"
        logger.error(msg)
        raise CalibrationError(msg)
    return value


def _find_bracket(params: ModelParams) -> tuple[float, float, float, float]:
    """
    Scan geometrically from `x = 1` until `tau(x) - T` changes sign.

    Returns:
        `(lo, hi, residual(lo), residual(hi))` with residuals of opposite
        sign (or one of them zero).
    """
    x = 1.0
    f_x = _residual(x, params)
    if f_x == 0.0:
        return x, x, f_x, f_x
    # tau decreases from +inf to 0, so a positive residual means x is small
    factor = 2.0 if f_x > 0.0 else 0.5
    for step in range(MAX_BRACKET_STEPS):
        x_next = x * factor
        f_next = _residual(x_next, params)
        logger.debug(f"Bracket search {step=}, {x_next=}, {f_next=}")
        if f_next == 0.0 or (f_next > 0.0) != (f_x > 0.0):
            if x < x_next:
                return x, x_next, f_x, f_next
            return x_next, x, f_next, f_x
        x, f_x = x_next, f_next
    msg = (
        f"Could not bracket r0 within {MAX_BRACKET_STEPS} "
        f"doublings/halvings for {params=}"
    )
    logger.error(msg)
    raise CalibrationError(msg)


def calibrate_r0(params: ModelParams) -> CalibrationResult:
    """
    Find `r0 > 0` such that `tau(r0) = T`.

    The root is bracketed by a geometric scan starting from `x = 1`, refined
    by bisection down to a relative width of `1e-8` and polished by Newton
    steps based on the analytic `tau'`. A Newton step leaving the bracket
    switches back to bisection.

    Args:
        params: Model parameters.

    Returns:
        The calibration result, with `|tau(r0) - T| <= 1e-12 max(1, T)`.

    Raises:
        CalibrationError:
            If no bracket is found, if the search leaves the floating-point
            range, or if the tolerance is not reached within the iteration
            budget.
    """
    logger.info(f"Start calibrate_r0 with {params=}")
    tolerance = 1e-12 * max(1.0, params.T)

    lo, hi, f_lo, f_hi = _find_bracket(params)
    logger.debug(f"Initial bracket ({lo=}, {hi=})")

    def _done(x: float, f_x: float, iterations: int) -> CalibrationResult:
        result = CalibrationResult(
            r0=x, residual=abs(f_x), iterations=iterations, bracket=(lo, hi)
        )
        logger.info(
            f"End calibrate_r0: r0={result.r0}, "
            f"residual={result.residual}, iterations={result.iterations}"
        )
        return result

    for x, f_x in ((lo, f_lo), (hi, f_hi)):
        if abs(f_x) <= tolerance:
            return _done(x, f_x, 0)

    iterations = 0

    def _shrink(x: float, f_x: float) -> None:
        nonlocal lo, hi, f_lo, f_hi
        if (f_x > 0.0) == (f_lo > 0.0):
            lo, f_lo = x, f_x
        else:
            hi, f_hi = x, f_x

    # Bisection
    while hi - lo > BISECTION_RTOL * hi:
        iterations += 1
        mid = 0.5 * (lo + hi)
        f_mid = _residual(mid, params)
        if abs(f_mid) <= tolerance:
            _shrink(mid, f_mid)
            return _done(mid, f_mid, iterations)
        _shrink(mid, f_mid)

    # Newton polish
    x = lo if abs(f_lo) <= abs(f_hi) else hi
    f_x = f_lo if x == lo else f_hi
    newton = True
    while iterations < MAX_ITERATIONS:
        iterations += 1
        if newton:
            x_new = x - f_x / float(tau_prime(x, params))
            if not (lo < x_new < hi):
                logger.warning(
                    f"Newton step left the bracket ({x_new=}, {lo=}, "
                    f"{hi=}); falling back to bisection"
                )
                newton = False
        if not newton:
            x_new = 0.5 * (lo + hi)
            if x_new in (lo, hi):
                break
        f_new = _residual(x_new, params)
        _shrink(x_new, f_new)
        x, f_x = x_new, f_new
        logger.debug(f"Calibration {iterations=}, {x=}, {f_x=}")
        if abs(f_x) <= tolerance:
            return _done(x, f_x, iterations)

    msg = (
        f"Calibration did not reach {tolerance=} within {MAX_ITERATIONS} "
        f"iterations (last residual {abs(f_x)}, bracket ({lo}, {hi}))"
    )
    logger.error(msg)
    raise CalibrationError(msg)


def build_solution(params: ModelParams) -> EquilibriumSolution:
    """
    Calibrate `r0` and assemble the corresponding equilibrium.

    Raises:
        CalibrationError: Propagated from `calibrate_r0`.
    """
    result = calibrate_r0(params)
    return EquilibriumSolution(
        params=params, r0=result.r0, I=I_from_r0(params, result.r0)
    )


class CoefficientGrid(BaseModel):
    """
    Coefficient curves sampled on the uniform grid `t_i = i T / (n - 1)`.

    Attributes:
        sol: The equilibrium the curves belong to.
        table: One row per grid point, columns as in `GRID_COLUMNS` (plus any
            attached column); `beta` is `NaN` on the last row.
        beta_defined: Boolean mask, `False` where `beta` is undefined.
    """

    sol: EquilibriumSolution
    table: pd.DataFrame
    beta_defined: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @property
    def t(self) -> np.ndarray:
        return self.table["t"].to_numpy()

    def column(self, name: str) -> np.ndarray:
        return self.table[name].to_numpy()

    def attach_column(
        self,
        name: str,
        values: np.ndarray,
        *,
        after: Optional[str] = None,
    ) -> "CoefficientGrid":
        """
        Return a new grid with an extra column, e.g. the oracle `Sigma3`.

        Args:
            name: Column name.
            values: One value per grid point.
            after: Existing column after which to insert (default: last).
        """
        if len(values) != len(self.table):
            raise ValueError(
                f"Column {name} has {len(values)} values, "
                f"but the grid has {len(self.table)} points"
            )
        table = self.table.copy()
        position = (
            table.columns.get_loc(after) + 1
            if after is not None
            else len(table.columns)
        )
        table.insert(position, name, np.asarray(values, dtype=float))
        return CoefficientGrid(
            sol=self.sol, table=table, beta_defined=self.beta_defined
        )


def sample_grid(sol: EquilibriumSolution, n: int) -> CoefficientGrid:
    """
    Sample every closed-form coefficient curve on a uniform grid.

    Args:
        sol: Calibrated equilibrium.
        n: Number of grid points (at least 2).

    Returns:
        The sampled grid.
    """
    if n < 2:
        raise ValueError(f"A coefficient grid needs at least 2 points ({n=})")
    t = sol.T * np.arange(n, dtype=float) / (n - 1)
    t[-1] = sol.T
    _check_time(sol, t)
    r = _r(sol, t)
    beta_defined = r > 0.0
    beta_defined[-1] = False
    beta = np.full(n, np.nan)
    beta[beta_defined] = _beta(sol, r[beta_defined])
    lam = _lambda(sol, r)
    alpha = _alpha(sol, r)
    columns = {
        "t": t,
        "r": r,
        "Sigma1": _sigma1(sol, r),
        "Sigma2": _sigma2(sol, r),
        "Sigma4": _sigma4(sol, r),
        "lambda": lam,
        "mu": -alpha * lam,
        "beta": beta,
        "s": -alpha * (1.0 + r),
        "alpha": alpha,
        "J": _J(sol, r),
        "K": K_of_t(sol, t),
        "f": _f(sol, r),
        "g": _g(sol, r),
        "fprime": sol.c * _h(sol, r),
        "remaining_variance": _remaining_variance(sol, r),
    }
    table = pd.DataFrame(columns, columns=GRID_COLUMNS)
    logger.info(f"Sampled coefficient grid with {n=} points")
    return CoefficientGrid(sol=sol, table=table, beta_defined=beta_defined)
