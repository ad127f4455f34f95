# Copyright 2024 (C) The kyle-constrained authors
#
# This file is part of kyle-constrained, distributed under the BSD-3-Clause
# license.
"""
Functions to check the invariants of a calibrated equilibrium.
"""
import logging
import math
from typing import Mapping
from typing import Optional
from typing import Sequence

import numpy as np
import pandas as pd

from kyle_constrained.closed_form import _alpha
from kyle_constrained.closed_form import _beta
from kyle_constrained.closed_form import _J
from kyle_constrained.closed_form import _K_integrand
from kyle_constrained.closed_form import _lambda
from kyle_constrained.closed_form import _r
from kyle_constrained.closed_form import _r_prime
from kyle_constrained.closed_form import _sigma1
from kyle_constrained.closed_form import _sigma2
from kyle_constrained.closed_form import _sigma4
from kyle_constrained.closed_form import beta_sq_sigma1_bounds
from kyle_constrained.closed_form import block_fraction_closed_form
from kyle_constrained.closed_form import EquilibriumSolution
from kyle_constrained.closed_form import f_of_t
from kyle_constrained.closed_form import fprime_of_t
from kyle_constrained.closed_form import fsecond_of_t
from kyle_constrained.closed_form import g_of_t
from kyle_constrained.closed_form import J_prime
from kyle_constrained.closed_form import K_of_t
from kyle_constrained.closed_form import lambda_of_t
from kyle_constrained.closed_form import lambda_prime
from kyle_constrained.closed_form import sigma1_of_t
from kyle_constrained.closed_form import sigma4_of_t
from kyle_constrained.oracle import delta_stop
from kyle_constrained.oracle import integrate_fg
from kyle_constrained.oracle import integrate_K
from kyle_constrained.oracle import integrate_r_sigma1
from kyle_constrained.oracle import integrate_sigma3
from kyle_constrained.oracle import integrate_sigma4
from kyle_constrained.oracle import observed_orders
from kyle_constrained.oracle import sup_gap


logger = logging.getLogger(__name__)

CHECK_COLUMNS = ["check", "value", "bound", "tolerance", "passed"]
PERTURBABLE_COEFFICIENTS = ("r", "lambda", "mu", "s", "alpha", "J")

HJB_ATOL = 1e-9
FILTER_RTOL = 1e-12
TERMINAL_ATOL = 1e-8
ORACLE_ATOL = 1e-6
ORACLE_K_ATOL = 1e-8
CROSS_RTOL = 1e-5
RK4_MIN_ORDER = 3.5
FD_RTOL = 1e-5
ORACLE_WINDOW = 1e-3


def _row(check: str, value: float, bound: str, tolerance: float) -> dict:
    if bound == "<=":
        passed = value <= tolerance
    elif bound == "<":
        passed = value < tolerance
    elif bound == ">=":
        passed = value >= tolerance
    elif bound == ">":
        passed = value > tolerance
    else:
        raise ValueError(f"Unknown {bound=}")
    return dict(
        check=check,
        value=float(value),
        bound=bound,
        tolerance=float(tolerance),
        passed=bool(passed and not math.isnan(value)),
    )


def _max_relative(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.abs(a), np.abs(b))
    diff = np.abs(a - b)
    with np.errstate(divide="ignore", invalid="ignore"):
        relative = np.where(scale > 0.0, diff / scale, 0.0)
    return float(np.max(relative))


def check_hjb_residuals(
    sol: EquilibriumSolution,
    t: np.ndarray,
    scaling: Mapping[str, float],
) -> list[dict]:
    """
    Residuals of the five coefficient equations of the insider's
    Hamilton-Jacobi-Bellman equation.

    The `K` equation uses the derivative of `K` in the `r` variable, so that
    it is checked against the quadrature representation of `K`.
    """
    p = sol.params
    I = sol.I
    r = _r(sol, t)
    lam = scaling.get("lambda", 1.0) * _lambda(sol, r)
    alpha = scaling.get("alpha", 1.0) * _alpha(sol, r)
    J = scaling.get("J", 1.0) * _J(sol, r)
    mu = scaling.get("mu", 1.0) * (-_alpha(sol, r) * _lambda(sol, r))
    s = scaling.get("s", 1.0) * (-alpha * (1.0 + r))
    r = scaling.get("r", 1.0) * r
    dJ = np.asarray(J_prime(sol, t))
    r_dot = _r_prime(sol, _r(sol, t))
    integrand = np.array([_K_integrand(float(x)) for x in _r(sol, t)])
    dK = -p.sigma_w**2 * I / sol.c * integrand * r_dot
    residuals = {
        "hjb_xx": lam - 2.0 * I * (1.0 + r) + J * r,
        "hjb_xq": lam - (1.0 + r) * J,
        "hjb_q": mu - s * J,
        "hjb_qq": s * (J - 2.0 * I) + dJ + mu,
        "hjb_constant": dK + p.sigma_w**2 * (I - J) * r * r,
    }
    return [
        _row(name, float(np.max(np.abs(values))), "<=", HJB_ATOL)
        for name, values in residuals.items()
    ]


def check_filter_identities(
    sol: EquilibriumSolution,
    t: np.ndarray,
    scaling: Mapping[str, float],
) -> list[dict]:
    """
    Relative residuals of the Kalman-Bucy relations linking the pricing rule
    to the insider's strategy, at `t < T`.
    """
    sigma_w2 = sol.params.sigma_w**2
    r_raw = _r(sol, t)
    beta = _beta(sol, r_raw)
    alpha_raw = _alpha(sol, r_raw)
    lam = scaling.get("lambda", 1.0) * _lambda(sol, r_raw)
    mu = scaling.get("mu", 1.0) * (-alpha_raw * _lambda(sol, r_raw))
    s = scaling.get("s", 1.0) * (-alpha_raw * (1.0 + r_raw))
    alpha = scaling.get("alpha", 1.0) * alpha_raw
    r = scaling.get("r", 1.0) * r_raw
    sigma1 = _sigma1(sol, r_raw)
    sigma2 = _sigma2(sol, r_raw)
    return [
        _row(
            "filter_lambda",
            _max_relative(lam * sigma_w2, beta * sigma2),
            "<=",
            FILTER_RTOL,
        ),
        _row(
            "filter_r",
            _max_relative(r * sigma_w2, beta * sigma1),
            "<=",
            FILTER_RTOL,
        ),
        _row("filter_mu", _max_relative(mu, -alpha * lam), "<=", FILTER_RTOL),
        _row(
            "filter_s",
            _max_relative(s, -alpha * (1.0 + r)),
            "<=",
            FILTER_RTOL,
        ),
        _row(
            "sigma2_identity",
            _max_relative(sigma2, lam * sigma1 / r),
            "<=",
            FILTER_RTOL,
        ),
    ]


def check_terminal_facts(sol: EquilibriumSolution) -> list[dict]:
    """
    Boundary values at `T`: `r` and `Sigma1` vanish and
    `J(T-) = lambda(T) = 2 I`.
    """
    T = sol.T
    two_I = 2.0 * sol.I
    lambda_T = float(lambda_of_t(sol, T))
    J_T = float(_J(sol, _r(sol, np.array([T])))[0])
    return [
        _row(
            "terminal_r",
            abs(float(_r(sol, np.array([T]))[0])),
            "<=",
            TERMINAL_ATOL,
        ),
        _row(
            "terminal_sigma1",
            abs(float(sigma1_of_t(sol, T))) / sol.params.sigma_a**2,
            "<=",
            TERMINAL_ATOL,
        ),
        _row(
            "terminal_lambda", abs(lambda_T - two_I) / two_I, "<=", FILTER_RTOL
        ),
        _row("terminal_J", abs(J_T - two_I) / two_I, "<=", FILTER_RTOL),
    ]


def check_shape_facts(sol: EquilibriumSolution, t: np.ndarray) -> list[dict]:
    """
    Sign pattern, monotonicity of `lambda`, bounds of `beta^2 Sigma1`, the
    derivative of `lambda`, the end-point signs of `f''` and the block
    fraction.
    """
    T = sol.T
    t_open = t[t < T]
    r = _r(sol, t_open)
    lam = _lambda(sol, r)
    alpha = _alpha(sol, r)
    beta = _beta(sol, r)
    violations = (
        np.count_nonzero(lam <= 0.0)
        + np.count_nonzero(beta <= 0.0)
        + np.count_nonzero(alpha <= 0.0)
        + np.count_nonzero(-alpha * lam >= 0.0)
        + np.count_nonzero(-alpha * (1.0 + r) >= 0.0)
    )
    rows = [_row("sign_pattern", violations, "<=", 0)]

    lam_full = np.asarray(lambda_of_t(sol, t))
    rows.append(
        _row("lambda_decreasing", float(np.max(np.diff(lam_full))), "<", 0.0)
    )

    lo, hi = beta_sq_sigma1_bounds(sol)
    product = beta**2 * _sigma1(sol, r)
    excess = max(
        float(np.max(product - hi * (1.0 + FILTER_RTOL))),
        float(np.max(lo * (1.0 - FILTER_RTOL) - product)),
    )
    rows.append(_row("beta_sq_sigma1_bounds", excess, "<=", 0.0))

    h = 1e-5 * T
    t_mid = np.linspace(0.1 * T, 0.9 * T, 21)
    fd = (
        np.asarray(lambda_of_t(sol, t_mid + h))
        - np.asarray(lambda_of_t(sol, t_mid - h))
    ) / (2.0 * h)
    rows.append(
        _row(
            "lambda_prime_fd",
            _max_relative(fd, np.asarray(lambda_prime(sol, t_mid))),
            "<=",
            FD_RTOL,
        )
    )

    p = sol.params
    r0 = sol.r0
    f2_start = float(fsecond_of_t(sol, 0.0))
    f2_end = float(fsecond_of_t(sol, T))
    expected_start = -(p.sigma_w**4) * r0**4
    expected_start /= p.sigma_a**4 * (1.0 + 3.0 * r0)
    expected_end = 3.0 * sol.c**2 * (sol.A - sol.B)
    delta = 1e-4 * T
    fd_start = (
        float(fprime_of_t(sol, delta)) - float(fprime_of_t(sol, 0.0))
    ) / delta
    fd_end = (
        float(fprime_of_t(sol, T)) - float(fprime_of_t(sol, T - delta))
    ) / delta
    rows += [
        _row("fsecond_start_negative", f2_start, "<", 0.0),
        _row("fsecond_end_positive", f2_end, ">", 0.0),
        _row(
            "fsecond_start_closed_form",
            abs(f2_start - expected_start) / abs(expected_start),
            "<=",
            1e-10,
        ),
        _row(
            "fsecond_end_closed_form",
            abs(f2_end - expected_end) / abs(expected_end),
            "<=",
            1e-10,
        ),
        _row("fsecond_fd_start_negative", fd_start, "<", 0.0),
        _row("fsecond_fd_end_positive", fd_end, ">", 0.0),
    ]

    fraction = block_fraction_closed_form(sol)
    rows += [
        _row("block_fraction_positive", fraction, ">", 0.0),
        _row("block_fraction_below_one", fraction, "<", 1.0),
        _row(
            "block_fraction_f_end",
            abs(fraction - (1.0 - float(f_of_t(sol, T)))),
            "<=",
            1e-12,
        ),
        _row(
            "block_fraction_g_end",
            abs(fraction - float(g_of_t(sol, T))),
            "<=",
            1e-12,
        ),
    ]
    return rows


def check_oracle(
    sol: EquilibriumSolution,
    *,
    oracle_steps: int,
    convergence_steps: Sequence[int],
) -> list[dict]:
    """
    Compare the ODE oracle with the closed forms and measure its order.
    """
    p = sol.params
    T = sol.T
    t_max = T - ORACLE_WINDOW

    r_sigma1 = integrate_r_sigma1(p, sol.r0, oracle_steps)
    sigma4 = integrate_sigma4(sol, oracle_steps)
    fg = integrate_fg(sol, oracle_steps)
    K = integrate_K(sol, oracle_steps)
    sigma3 = integrate_sigma3(sol, oracle_steps)

    def _r_of(t):
        return _r(sol, t)

    def _sigma1_of(t):
        return _sigma1(sol, _r(sol, t))

    rows = [
        _row(
            "oracle_r",
            sup_gap(r_sigma1, "r", _r_of, t_max=t_max),
            "<=",
            ORACLE_ATOL,
        ),
        _row(
            "oracle_sigma1",
            sup_gap(r_sigma1, "Sigma1", _sigma1_of, t_max=t_max),
            "<=",
            ORACLE_ATOL,
        ),
        _row(
            "oracle_sigma4",
            sup_gap(
                sigma4, "Sigma4", lambda t: sigma4_of_t(sol, t), t_max=t_max
            ),
            "<=",
            ORACLE_ATOL,
        ),
        _row(
            "oracle_f",
            sup_gap(fg, "f", lambda t: f_of_t(sol, t), t_max=t_max),
            "<=",
            ORACLE_ATOL,
        ),
        _row(
            "oracle_g",
            sup_gap(fg, "g", lambda t: g_of_t(sol, t), t_max=t_max),
            "<=",
            ORACLE_ATOL,
        ),
        _row(
            "oracle_K0",
            abs(float(K.component("K")[0]) - float(K_of_t(sol, 0.0))),
            "<=",
            ORACLE_K_ATOL,
        ),
    ]

    # Sigma2 from the oracle states, against the closed form
    mask = r_sigma1.grid <= t_max
    r_oracle = r_sigma1.component("r")[mask]
    sigma2_oracle = (
        _lambda(sol, r_oracle) * r_sigma1.component("Sigma1")[mask] / r_oracle
    )
    rows.append(
        _row(
            "oracle_sigma2_consistency",
            _max_relative(
                sigma2_oracle, _sigma2(sol, _r(sol, r_sigma1.grid[mask]))
            ),
            "<=",
            CROSS_RTOL,
        )
    )

    rows += [
        _row(
            "oracle_sigma1_nonnegative",
            float(np.min(r_sigma1.component("Sigma1"))),
            ">=",
            0.0,
        ),
        _row(
            "oracle_r_nonnegative",
            float(np.min(r_sigma1.component("r"))),
            ">=",
            -1e-12,
        ),
        _row(
            "oracle_sigma3_nonnegative",
            float(np.min(sigma3.component("Sigma3"))),
            ">=",
            0.0,
        ),
        _row(
            "oracle_sigma4_nonnegative",
            float(np.min(sigma4.component("Sigma4"))),
            ">=",
            0.0,
        ),
    ]

    half = 0.5 * T
    gaps_r = []
    gaps_fg = []
    gaps_sigma4 = []
    K0 = []
    for n in convergence_steps:
        curve = integrate_r_sigma1(p, sol.r0, n)
        gaps_r.append(
            max(
                sup_gap(curve, "r", _r_of, t_max=half),
                sup_gap(curve, "Sigma1", _sigma1_of, t_max=half),
            )
        )
        curve = integrate_fg(sol, n)
        gaps_fg.append(
            sup_gap(curve, "f", lambda t: f_of_t(sol, t), t_max=half)
        )
        curve = integrate_sigma4(sol, n)
        gaps_sigma4.append(
            sup_gap(curve, "Sigma4", lambda t: _sigma4(sol, _r(sol, t)))
        )
        K0.append(float(integrate_K(sol, n).component("K")[0]))
    gaps_K = [abs(a - b) for a, b in zip(K0[:-1], K0[1:])]
    for name, gaps in (
        ("rk4_order_r_sigma1", gaps_r),
        ("rk4_order_fg", gaps_fg),
        ("rk4_order_sigma4", gaps_sigma4),
        ("rk4_order_K", gaps_K),
    ):
        orders = observed_orders(gaps)
        logger.debug(f"{name}: {gaps=}, {orders=}")
        rows.append(_row(name, min(orders), ">=", RK4_MIN_ORDER))
    logger.debug(f"Oracle stop distance {delta_stop(T, oracle_steps)=}")
    return rows


def run_invariant_suite(
    sol: EquilibriumSolution,
    *,
    grid_points: int = 1000,
    oracle_steps: int = 100_000,
    convergence_steps: Sequence[int] = (100, 200, 400),
    include_oracle: bool = True,
    coefficient_scaling: Optional[Mapping[str, float]] = None,
) -> pd.DataFrame:
    """
    Run every invariant check of a calibrated equilibrium.

    Args:
        sol: Calibrated equilibrium.
        grid_points: Points of the uniform grid on `[0, T]` used by pointwise
            checks.
        oracle_steps: RK4 steps of the oracle comparisons.
        convergence_steps: Step counts (each doubling the previous one) of
            the order measurement.
        include_oracle: Whether to run the (slower) oracle comparisons.
        coefficient_scaling:
            Multiplicative perturbation of named coefficients (keys among
            `PERTURBABLE_COEFFICIENTS`) entering the HJB and filter checks,
            for negative controls.

    Returns:
        The check matrix, one row per check, with columns `CHECK_COLUMNS`.
    """
    scaling = dict(coefficient_scaling or {})
    unknown = set(scaling) - set(PERTURBABLE_COEFFICIENTS)
    if unknown:
        raise ValueError(
            f"Cannot perturb {sorted(unknown)}; "
            f"allowed keys: {PERTURBABLE_COEFFICIENTS}"
        )
    if grid_points < 2:
        raise ValueError(f"{grid_points=} must be at least 2")
    logger.info(f"Start run_invariant_suite with {grid_points=}")
    T = sol.T
    t = T * np.arange(grid_points, dtype=float) / (grid_points - 1)
    t[-1] = T
    t_open = t[:-1]

    rows = check_hjb_residuals(sol, t, scaling)
    rows += check_filter_identities(sol, t_open, scaling)
    rows += check_terminal_facts(sol)
    rows += check_shape_facts(sol, t)
    if include_oracle:
        rows += check_oracle(
            sol,
            oracle_steps=oracle_steps,
            convergence_steps=convergence_steps,
        )
    matrix = pd.DataFrame(rows, columns=CHECK_COLUMNS)
    for row in matrix.loc[~matrix["passed"]].itertuples():
        logger.warning(
            f"Check {row.check} failed (value={row.value}, "
            f"bound {row.bound} {row.tolerance})"
        )
    logger.info(
        f"End run_invariant_suite: {int(matrix['passed'].sum())}/"
        f"{len(matrix)} checks passed"
    )
    return matrix
