# Copyright 2024 (C) The kyle-constrained authors
#
# This file is part of kyle-constrained, distributed under the BSD-3-Clause
# license.
"""
Independent ODE route to the equilibrium curves.

The functions in this module integrate the raw ODEs of the equilibrium with
a fixed-step classical Runge-Kutta scheme. They only use closed-form
coefficients as time-dependent inputs (e.g. `alpha(t)` in the `Sigma_3`
equation), never the closed-form solutions they are compared to.
"""
import logging
import math
from typing import Callable
from typing import Optional
from typing import Sequence

import numpy as np
from pydantic import BaseModel
from pydantic import validator

from kyle_constrained.closed_form import _alpha
from kyle_constrained.closed_form import _beta
from kyle_constrained.closed_form import _J
from kyle_constrained.closed_form import _lambda
from kyle_constrained.closed_form import _r
from kyle_constrained.closed_form import EquilibriumSolution
from kyle_constrained.closed_form import ModelParams


logger = logging.getLogger(__name__)

MIN_STEPS = 100
RK4_METHOD = "rk4-fixed"


class BlowUpError(RuntimeError):
    """
    Raised when an integrated state becomes non-finite or leaves its
    admissible region before the stop time.
    """

    pass


class OdeSolution(BaseModel):
    """
    A fixed-step ODE solution.

    Attributes:
        grid: Strictly increasing times, starting at `0`.
        values: Array of shape `(len(grid), len(components))`.
        components: Names of the state components.
        step: Absolute step size.
        method: Integration method identifier.
        stop_time: Last time reached (`T` or `T - delta_stop`).
        one_sided_end: Whether the last value is a one-sided limit at `T`.
    """

    grid: np.ndarray
    values: np.ndarray
    components: list[str]
    step: float
    method: str = RK4_METHOD
    stop_time: float
    one_sided_end: bool = False

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("grid")
    def increasing_grid(cls, v):
        """
        Check that the grid starts at zero and is strictly increasing.
        """
        if v.ndim != 1 or len(v) < 2:
            raise ValueError("grid must be one-dimensional with >= 2 points")
        if v[0] != 0.0:
            raise ValueError(f"grid must start at 0 (given {v[0]})")
        if not np.all(np.diff(v) > 0.0):
            raise ValueError("grid must be strictly increasing")
        return v

    @validator("values")
    def finite_values(cls, v, values):
        """
        Check that values are finite and match the grid.
        """
        grid = values.get("grid")
        if grid is not None and v.shape[0] != len(grid):
            raise ValueError(
                f"values have {v.shape[0]} rows, grid has {len(grid)} points"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        return v

    def component(self, name: str) -> np.ndarray:
        """
        Return the time series of one state component.
        """
        try:
            ind = self.components.index(name)
        except ValueError:
            raise ValueError(
                f"Unknown component {name}, available: {self.components}"
            )
        return self.values[:, ind]


def delta_stop(T: float, n_steps: int) -> float:
    """
    Distance from `T` at which singular systems stop,
    `max(1e-6 T, T / n_steps)`.
    """
    return max(1e-6 * T, T / n_steps)


def _check_n_steps(n_steps: int) -> None:
    if n_steps < MIN_STEPS:
        raise ValueError(f"{n_steps=} is below the minimum of {MIN_STEPS}")


def rk4_integrate(
    rhs: Callable[[np.ndarray, int], np.ndarray],
    y0: Sequence[float],
    *,
    h: float,
    n_steps: int,
    admissible: Optional[Callable[[np.ndarray], bool]] = None,
    label: str = "ode",
) -> np.ndarray:
    """
    Classical fourth-order Runge-Kutta with fixed step.

    Time-dependent inputs are passed through the half-step index: stage
    evaluations of step `i` use indices `2i`, `2i+1` and `2i+2`, i.e.
    the times `t_i`, `t_i + h/2` and `t_i + h`.

    Args:
        rhs: Right-hand side `rhs(y, half_step_index)`.
        y0: Initial state.
        h: Step size (negative for backward integration).
        n_steps: Number of steps.
        admissible: Optional state check; a `False` return is a blow-up.
        label: Name of the system, for messages.

    Returns:
        Array of shape `(n_steps + 1, len(y0))`.

    Raises:
        BlowUpError: If the state becomes non-finite or inadmissible.
    """
    y = np.asarray(y0, dtype=float)
    values = np.empty((n_steps + 1, y.size))
    values[0] = y
    half = 0.5 * h
    for i in range(n_steps):
        j = 2 * i
        k1 = rhs(y, j)
        k2 = rhs(y + half * k1, j + 1)
        k3 = rhs(y + half * k2, j + 1)
        k4 = rhs(y + h * k3, j + 2)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)) or (
            admissible is not None and not admissible(y)
        ):
            msg = (
                f"Integration of {label} blew up at step {i + 1} "
                f"(t={(i + 1) * h}, state={y})"
            )
            logger.error(msg)
            raise BlowUpError(msg)
        values[i + 1] = y
    return values


def _half_step_times(h: float, n_steps: int, t0: float = 0.0) -> np.ndarray:
    return t0 + 0.5 * h * np.arange(2 * n_steps + 1, dtype=float)


def integrate_r_sigma1(
    params: ModelParams, r0: float, n_steps: int
) -> OdeSolution:
    """
    Integrate the autonomous system

        Sigma_1' = -sigma_w^2 (r^2 + 2r),
        r' = -sigma_w^2 r^2 (1+r)(1+2r) / ((1+3r) Sigma_1),

    from `(r0, sigma_a^2)`, up to `T - delta_stop`.

    Args:
        params: Model parameters.
        r0: Initial condition of `r`.
        n_steps: Number of steps the interval `[0, T]` is divided into.

    Raises:
        BlowUpError: If `Sigma_1 <= 0` or `r` leaves `(0, r0]` early.
    """
    _check_n_steps(n_steps)
    if r0 <= 0.0:
        raise ValueError(f"r0 must be strictly positive (given {r0=})")
    T = params.T
    h = T / n_steps
    n_taken = int(math.floor((T - delta_stop(T, n_steps)) / h + 1e-9))
    sw2 = params.sigma_w**2

    def rhs(y: np.ndarray, _j: int) -> np.ndarray:
        r, sigma1 = y
        return np.array(
            [
                -sw2 * r * r * (1.0 + r) * (1.0 + 2.0 * r)
                / ((1.0 + 3.0 * r) * sigma1),
                -sw2 * (r * r + 2.0 * r),
            ]
        )

    def admissible(y: np.ndarray) -> bool:
        return bool(y[1] > 0.0 and 0.0 < y[0] <= r0 * (1.0 + 1e-12))

    logger.info(f"Start integrate_r_sigma1 with {r0=}, {n_steps=}")
    values = rk4_integrate(
        rhs,
        (r0, params.sigma_a**2),
        h=h,
        n_steps=n_taken,
        admissible=admissible,
        label="(r, Sigma1)",
    )
    grid = h * np.arange(n_taken + 1, dtype=float)
    return OdeSolution(
        grid=grid,
        values=values,
        components=["r", "Sigma1"],
        step=h,
        stop_time=float(grid[-1]),
    )


def integrate_sigma3(sol: EquilibriumSolution, n_steps: int) -> OdeSolution:
    """
    Integrate `Sigma_3' = -2 alpha Sigma_3 + sigma_w^2 r^2` from
    `Sigma_3(0) = 0` over `[0, T]`.

    `Sigma_3(T)` is reported as the left limit at `T`.
    """
    _check_n_steps(n_steps)
    T = sol.T
    h = T / n_steps
    r = _r(sol, np.minimum(_half_step_times(h, n_steps), T))
    alpha = _alpha(sol, r)
    forcing = sol.params.sigma_w**2 * r * r

    def rhs(y: np.ndarray, j: int) -> np.ndarray:
        return -2.0 * alpha[j] * y + forcing[j]

    logger.info(f"Start integrate_sigma3 with {n_steps=}")
    values = rk4_integrate(
        rhs,
        (0.0,),
        h=h,
        n_steps=n_steps,
        admissible=lambda y: bool(y[0] >= -1e-12),
        label="Sigma3",
    )
    logger.warning(
        f"Sigma3 at T={T} is a one-sided limit (value {values[-1, 0]})"
    )
    grid = h * np.arange(n_steps + 1, dtype=float)
    grid[-1] = T
    return OdeSolution(
        grid=grid,
        values=values,
        components=["Sigma3"],
        step=h,
        stop_time=T,
        one_sided_end=True,
    )


def integrate_sigma4(sol: EquilibriumSolution, n_steps: int) -> OdeSolution:
    """
    Integrate `Sigma_4' = -sigma_w^2 lambda^2` from `Sigma_4(0) = sigma_v^2`
    over `[0, T]`.
    """
    _check_n_steps(n_steps)
    T = sol.T
    h = T / n_steps
    r = _r(sol, np.minimum(_half_step_times(h, n_steps), T))
    forcing = -sol.params.sigma_w**2 * _lambda(sol, r) ** 2

    def rhs(y: np.ndarray, j: int) -> np.ndarray:
        return np.array([forcing[j]])

    logger.info(f"Start integrate_sigma4 with {n_steps=}")
    values = rk4_integrate(
        rhs,
        (sol.params.sigma_v**2,),
        h=h,
        n_steps=n_steps,
        admissible=lambda y: bool(y[0] > 0.0),
        label="Sigma4",
    )
    grid = h * np.arange(n_steps + 1, dtype=float)
    grid[-1] = T
    return OdeSolution(
        grid=grid,
        values=values,
        components=["Sigma4"],
        step=h,
        stop_time=T,
    )


def integrate_fg(sol: EquilibriumSolution, n_steps: int) -> OdeSolution:
    """
    Integrate the expected-holdings system

        f' = beta (1 - f - g) + alpha g,
        g' = r beta (1 - f - g) - alpha g,

    from `(0, 0)` up to `T - delta_stop` (`beta` diverges at `T`).
    """
    _check_n_steps(n_steps)
    T = sol.T
    h = T / n_steps
    n_taken = int(math.floor((T - delta_stop(T, n_steps)) / h + 1e-9))
    r = _r(sol, _half_step_times(h, n_taken))
    if np.any(r <= 0.0):
        msg = "r vanishes before the stop time of the (f, g) system"
        logger.error(msg)
        raise BlowUpError(msg)
    alpha = _alpha(sol, r)
    beta = _beta(sol, r)

    def rhs(y: np.ndarray, j: int) -> np.ndarray:
        f, g = y
        gap = beta[j] * (1.0 - f - g)
        return np.array([gap + alpha[j] * g, r[j] * gap - alpha[j] * g])

    logger.info(f"Start integrate_fg with {n_steps=}")
    values = rk4_integrate(
        rhs, (0.0, 0.0), h=h, n_steps=n_taken, label="(f, g)"
    )
    grid = h * np.arange(n_taken + 1, dtype=float)
    return OdeSolution(
        grid=grid,
        values=values,
        components=["f", "g"],
        step=h,
        stop_time=float(grid[-1]),
    )


def integrate_K(sol: EquilibriumSolution, n_steps: int) -> OdeSolution:
    """
    Integrate `K' = -sigma_w^2 (I - J) r^2` backward from `K(T) = 0`.

    The returned grid is ascending, with `K` at `0` in the first row.
    """
    _check_n_steps(n_steps)
    T = sol.T
    h = T / n_steps
    times = np.maximum(_half_step_times(-h, n_steps, t0=T), 0.0)
    r = _r(sol, times)
    forcing = -sol.params.sigma_w**2 * (sol.I - _J(sol, r)) * r * r

    def rhs(y: np.ndarray, j: int) -> np.ndarray:
        return np.array([forcing[j]])

    logger.info(f"Start integrate_K with {n_steps=}")
    backward = rk4_integrate(rhs, (0.0,), h=-h, n_steps=n_steps, label="K")
    grid = h * np.arange(n_steps + 1, dtype=float)
    grid[-1] = T
    return OdeSolution(
        grid=grid,
        values=backward[::-1].copy(),
        components=["K"],
        step=h,
        stop_time=T,
    )


def sup_gap(
    curve: OdeSolution,
    component: str,
    reference: Callable[[np.ndarray], np.ndarray],
    *,
    t_max: Optional[float] = None,
) -> float:
    """
    Sup-norm distance between an oracle component and a reference curve on
    the grid points `t <= t_max`.
    """
    mask = np.ones(len(curve.grid), dtype=bool)
    if t_max is not None:
        mask = curve.grid <= t_max
    values = curve.component(component)[mask]
    return float(np.max(np.abs(values - reference(curve.grid[mask]))))


def observed_orders(gaps: Sequence[float]) -> list[float]:
    """
    Observed convergence orders `log2(gap(h) / gap(h/2))` for a sequence of
    sup-norm gaps at step sizes `h, h/2, h/4, ...`.
    """
    return [
        math.log2(coarse / fine) if fine > 0.0 else math.inf
        for coarse, fine in zip(gaps[:-1], gaps[1:])
    ]
