# Copyright 2024 (C) The kyle-constrained authors
#
# This file is part of kyle-constrained, distributed under the BSD-3-Clause
# license.
"""
Closed-form evaluation of the constrained-insider Kyle equilibrium.

Every function in this module is a pure function of the model parameters, of
the calibrated initial condition `r0` and of time. No root-finding on `r0`
and no simulation happen here (see `kyle_constrained.calibrate` for the
former).

Time-dependent evaluators accept either a scalar `t` (and return a `float`)
or a one-dimensional array of times (and return an array).
"""
import logging
import math
from typing import Optional
from typing import Union

import numpy as np
from pydantic import BaseModel
from pydantic import Field
from pydantic import validator
from scipy.integrate import quad


logger = logging.getLogger(__name__)

ArrayOrFloat = Union[float, np.ndarray]

F_MIN = math.pi - 3.0
F_MAX = 2.0 * math.pi
INVERSION_RTOL = 1e-12
K_QUAD_EPSABS = 1e-10
_EPS = float(np.finfo(float).eps)


class DomainError(ValueError):
    """
    Raised when an evaluator is called outside of its mathematical domain.
    """

    pass


class ModelParams(BaseModel):
    """
    Exogenous inputs of the model.

    Attributes:
        sigma_w: Noise-trader volatility.
        sigma_a: Standard deviation of the insider's holdings target.
        sigma_v: Standard deviation of the liquidating dividend.
        rho: Correlation between target and dividend, in `(0, 1]`.
        T: Trading horizon.
    """

    sigma_w: float = 1.0
    sigma_a: float = 1.0
    sigma_v: float = 1.0
    rho: float = 0.3
    T: float = 1.0

    class Config:
        allow_mutation = False
        extra = "forbid"

    @validator("sigma_w", "sigma_a", "sigma_v", "T")
    def strictly_positive(cls, v, field):
        """
        Check that volatilities and horizon are finite and strictly positive.
        """
        if not math.isfinite(v) or v <= 0.0:
            raise ValueError(
                f"{field.name} must be finite and strictly positive "
                f"(given {v})"
            )
        return v

    @validator("rho")
    def correlation_in_range(cls, v):
        """
        Check that `rho` lies in `(0, 1]`.
        """
        if not (0.0 < v <= 1.0):
            raise ValueError(f"rho must lie in (0, 1] (given {v})")
        return v

    @property
    def noise_ratio(self) -> float:
        """
        The ratio `sigma_w**2 / sigma_a**2`.
        """
        return self.sigma_w**2 / self.sigma_a**2


class EquilibriumSolution(BaseModel):
    """
    A calibrated equilibrium.

    Attributes:
        params: The model parameters.
        r0: Calibrated initial condition of `r`.
        I: Quadratic coefficient of the insider's value function.
    """

    params: ModelParams
    r0: float = Field(..., gt=0.0)
    I: float = Field(..., gt=0.0)

    class Config:
        allow_mutation = False

    @validator("I")
    def consistent_I(cls, v, values):
        """
        Check that `I` matches its closed form in terms of `r0`.
        """
        if "params" not in values or "r0" not in values:
            return v
        expected = I_from_r0(values["params"], values["r0"])
        if not math.isclose(v, expected, rel_tol=1e-12):
            raise ValueError(
                f"I={v} is inconsistent with r0={values['r0']} "
                f"(expected {expected})"
            )
        return v

    @property
    def T(self) -> float:
        return self.params.T

    @property
    def c(self) -> float:
        """
        The constant `(sigma_w**2 / sigma_a**2) * G(r0)`, which equals
        `-r'(T)`.
        """
        return self.params.noise_ratio * float(G(self.r0))

    @property
    def A(self) -> float:
        return 1.0 / (self.r0 * math.sqrt(1.0 + 2.0 * self.r0))

    @property
    def B(self) -> float:
        r0 = self.r0
        return (1.0 + r0 - r0 * r0) / (r0 * (1.0 + 2.0 * r0))


class StepCoefficients(BaseModel):
    """
    Equilibrium coefficients at a single time `t < T`.
    """

    t: float
    r: float
    lambda_: float = Field(..., alias="lambda")
    mu: float
    beta: float
    s: float
    alpha: float
    J: float

    class Config:
        allow_mutation = False
        allow_population_by_field_name = True


def _raise_domain_error(msg: str) -> None:
    logger.error(msg)
    raise DomainError(msg)


def _unwrap(values: np.ndarray, like: ArrayOrFloat) -> ArrayOrFloat:
    if np.ndim(like) == 0:
        return float(values.reshape(-1)[0])
    return values


def _as_nonnegative_array(x: ArrayOrFloat, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        _raise_domain_error(f"{name} must be finite (given {x})")
    if np.any(arr < 0.0):
        _raise_domain_error(f"{name} must be non-negative (given {x})")
    return arr


# Special functions


def F(x: ArrayOrFloat) -> ArrayOrFloat:
    """
    Evaluate `F(x) = 4 atan(sqrt(1+2x)) - sqrt(1+2x)(3+4x)/(1+x)^2`.

    `F` maps `[0, inf)` bijectively onto `[pi-3, 2pi)`.

    Args:
        x: Non-negative argument(s).

    Returns:
        The value(s) of `F`.

    Raises:
        DomainError: For negative or non-finite `x`.
    """
    arr = _as_nonnegative_array(x, "x")
    # F >= F_MIN holds after rounding
    return _unwrap(F_MIN + _F_offset(arr), x)


def F_prime(x: ArrayOrFloat) -> ArrayOrFloat:
    """
    Derivative `F'(x) = (1+3x) sqrt(1+2x) / (1+x)^3`.
    """
    arr = _as_nonnegative_array(x, "x")
    values = (1.0 + 3.0 * arr) * np.sqrt(1.0 + 2.0 * arr) / (1.0 + arr) ** 3
    return _unwrap(values, x)


def _F_offset(x: np.ndarray) -> np.ndarray:
    # F(x) - F(0), written without cancellation for small x
    s = np.sqrt(1.0 + 2.0 * x)
    s_minus_one = 2.0 * x / (s + 1.0)
    rational = (s_minus_one * (3.0 + 4.0 * x) - 2.0 * x - 3.0 * x * x) / (
        1.0 + x
    ) ** 2
    return 4.0 * np.arctan(s_minus_one / (s + 1.0)) - rational


def F_offset(x: ArrayOrFloat) -> ArrayOrFloat:
    """
    Evaluate `F(x) - F(0)` accurately, also for small `x`.
    """
    arr = _as_nonnegative_array(x, "x")
    return _unwrap(_F_offset(arr), x)


def _invert_offset(d: np.ndarray) -> np.ndarray:
    """
    Solve `F(x) - F(0) = d` for `x >= 0`, elementwise.

    Safeguarded Newton iteration: the bracket `[lo, hi]` is grown
    geometrically until it contains the root, and every Newton step that
    leaves the bracket is replaced by a bisection step.
    """
    d = np.atleast_1d(np.asarray(d, dtype=float))
    lo = np.zeros_like(d)
    hi = np.maximum(d, 1.0)
    for _ in range(1100):
        short = _F_offset(hi) < d
        if not np.any(short):
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, 2.0 * hi, hi)
    else:
        _raise_domain_error(f"Could not bracket F inverse for {d=}")

    x = np.clip(d, lo, hi)
    converged = np.zeros(d.shape, dtype=bool)
    for _ in range(200):
        residual = _F_offset(x) - d
        lo = np.where(residual < 0.0, x, lo)
        hi = np.where(residual > 0.0, x, hi)
        x_new = x - residual / F_prime(x)
        outside = (x_new < lo) | (x_new > hi) | ~np.isfinite(x_new)
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        # Converged entries are frozen
        x_new = np.where(converged, x, x_new)
        converged |= np.abs(x_new - x) <= 4.0 * _EPS * np.abs(x_new)
        x = x_new
        if np.all(converged):
            break

    residual = np.abs(_F_offset(x) - d)
    tolerance = INVERSION_RTOL * np.maximum(d, _EPS)
    if np.any(residual > tolerance):
        logger.warning(
            "F inverse did not reach the requested tolerance "
            f"(max residual {float(np.max(residual))})"
        )
    return x


def F_inv(y: ArrayOrFloat) -> ArrayOrFloat:
    """
    Inverse of `F` on `[pi-3, 2pi)`.

    Args:
        y: Value(s) in `[pi-3, 2pi)`.

    Returns:
        The unique `x >= 0` such that `F(x) = y`, to a relative tolerance of
        `1e-12`.

    Raises:
        DomainError: If `y` lies outside `[pi-3, 2pi)`.
    """
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < F_MIN) or np.any(
        arr >= F_MAX
    ):
        _raise_domain_error(f"F_inv is defined on [pi-3, 2pi) (given {y=})")
    return _unwrap(_invert_offset(arr - F_MIN), y)


def G(x: ArrayOrFloat) -> ArrayOrFloat:
    """
    Evaluate `G(x) = x^2 (1+2x)^(3/2) / (1+x)^2`, with `G(0) = 0`.

    Raises:
        DomainError: For negative or non-finite `x`.
    """
    arr = _as_nonnegative_array(x, "x")
    values = arr * arr * (1.0 + 2.0 * arr) ** 1.5 / (1.0 + arr) ** 2
    return _unwrap(values, x)


def G_prime(x: ArrayOrFloat) -> ArrayOrFloat:
    """
    Derivative `G'(x) = x (2+x)(1+3x) sqrt(1+2x) / (1+x)^3`.
    """
    arr = _as_nonnegative_array(x, "x")
    values = (
        arr
        * (2.0 + arr)
        * (1.0 + 3.0 * arr)
        * np.sqrt(1.0 + 2.0 * arr)
        / (1.0 + arr) ** 3
    )
    return _unwrap(values, x)


def _as_positive_array(x: ArrayOrFloat) -> np.ndarray:
    arr = _as_nonnegative_array(x, "x")
    if np.any(arr == 0.0):
        _raise_domain_error(f"tau is defined for x > 0 only (given {x=})")
    return arr


def tau(x: ArrayOrFloat, params: ModelParams) -> ArrayOrFloat:
    """
    Evaluate `tau(x) = sigma_a^2 (F(x) - F(0)) / (sigma_w^2 G(x))`.

    `tau` is the horizon at which `r` started from `x` reaches zero;
    calibration solves `tau(r0) = T`.

    Args:
        x: Strictly positive argument(s).
        params: Model parameters (only `sigma_w` and `sigma_a` enter).

    Raises:
        DomainError: For `x <= 0`.
    """
    arr = _as_positive_array(x)
    values = _F_offset(arr) / (params.noise_ratio * G(arr))
    return _unwrap(values, x)


def tau_prime(x: ArrayOrFloat, params: ModelParams) -> ArrayOrFloat:
    """
    Analytic derivative of `tau` with respect to `x`.
    """
    arr = _as_positive_array(x)
    g = G(arr)
    values = (F_prime(arr) * g - _F_offset(arr) * G_prime(arr)) / (
        params.noise_ratio * g * g
    )
    return _unwrap(values, x)


def I_from_r0(params: ModelParams, r0: float) -> float:
    """
    The constant `I = (rho sigma_v / sigma_a) r0 (1+2r0) / (2 (1+r0)^2)`.
    """
    return (
        params.rho
        * params.sigma_v
        / params.sigma_a
        * r0
        * (1.0 + 2.0 * r0)
        / (2.0 * (1.0 + r0) ** 2)
    )


# Time-dependent evaluators


def _check_time(
    sol: EquilibriumSolution,
    t: ArrayOrFloat,
    *,
    include_start: bool = True,
    include_end: bool = True,
) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    T = sol.T
    if not np.all(np.isfinite(arr)):
        _raise_domain_error(f"Time must be finite (given {t=})")
    below = arr < 0.0 if include_start else arr <= 0.0
    above = arr > T if include_end else arr >= T
    if np.any(below) or np.any(above):
        left = "[" if include_start else "("
        right = "]" if include_end else ")"
        _raise_domain_error(
            f"Time must lie in {left}0, {T}{right} (given {t=})"
        )
    return arr


def _r(sol: EquilibriumSolution, t: np.ndarray) -> np.ndarray:
    d0 = float(_F_offset(np.array([sol.r0]))[0])
    d = d0 - sol.c * t
    d = np.maximum(d, 0.0)
    return np.maximum(_invert_offset(d), 0.0)


def r_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Evaluate `r(t) = F^{-1}(F(r0) - (sigma_w^2/sigma_a^2) G(r0) t)`.

    The argument of the inverse is formed as an offset from `F(0)`, so that
    `r(T)` vanishes up to the calibration tolerance; tiny negative values
    are clamped to zero.

    Args:
        sol: Calibrated equilibrium.
        t: Time(s) in `[0, T]`.

    Raises:
        DomainError: For `t` outside `[0, T]`.
    """
    arr = _check_time(sol, t)
    return _unwrap(_r(sol, arr), t)


def _sigma1(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    p = sol.params
    return p.sigma_a**2 * G(r) / G(sol.r0)


def sigma1_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Remaining variance `Sigma_1(t) = sigma_a^2 G(r(t)) / G(r0)`.
    """
    arr = _check_time(sol, t)
    return _unwrap(_sigma1(sol, _r(sol, arr)), t)


def _sigma2(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    p = sol.params
    r0 = sol.r0
    return (
        p.rho
        * p.sigma_a
        * p.sigma_v
        * r
        * np.sqrt(1.0 + 2.0 * r)
        / (r0 * math.sqrt(1.0 + 2.0 * r0))
    )


def sigma2_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Remaining covariance
    `Sigma_2(t) = rho sigma_a sigma_v r sqrt(1+2r) / (r0 sqrt(1+2r0))`.
    """
    arr = _check_time(sol, t)
    return _unwrap(_sigma2(sol, _r(sol, arr)), t)


def _lambda(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    return 2.0 * sol.I * (1.0 + r) ** 2 / (1.0 + 2.0 * r)


def _alpha(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    return sol.c * (1.0 + r) ** 2 / ((1.0 + 3.0 * r) * (1.0 + 2.0 * r) ** 1.5)


def _beta(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    return sol.c * (1.0 + r) ** 2 / (r * (1.0 + 2.0 * r) ** 1.5)


def _J(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    return 2.0 * sol.I * (1.0 + r) / (1.0 + 2.0 * r)


def _r_prime(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    return -sol.c * (1.0 + r) ** 3 / ((1.0 + 3.0 * r) * np.sqrt(1.0 + 2.0 * r))


def lambda_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Price impact `lambda(t) = 2 I (1+r)^2 / (1+2r)`; `lambda(T) = 2 I`.
    """
    arr = _check_time(sol, t)
    return _unwrap(_lambda(sol, _r(sol, arr)), t)


def alpha_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    arr = _check_time(sol, t)
    return _unwrap(_alpha(sol, _r(sol, arr)), t)


def mu_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    arr = _check_time(sol, t)
    r = _r(sol, arr)
    return _unwrap(-_alpha(sol, r) * _lambda(sol, r), t)


def s_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    arr = _check_time(sol, t)
    r = _r(sol, arr)
    return _unwrap(-_alpha(sol, r) * (1.0 + r), t)


def J_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Cross coefficient of the value function, `J(t) = lambda(t) / (1+r(t))`.
    """
    arr = _check_time(sol, t)
    return _unwrap(_J(sol, _r(sol, arr)), t)


def beta_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Trading intensity `beta(t) = c (1+r)^2 / (r (1+2r)^(3/2))` on `[0, T)`.

    Raises:
        DomainError:
            At `t = T`, where `beta` does not exist; the terminal block order
            takes its place.
    """
    arr = _check_time(sol, t, include_end=False)
    r = _r(sol, arr)
    if np.any(r <= 0.0):
        _raise_domain_error(
            f"beta is undefined where r(t) vanishes (given {t=}); "
            "use the terminal block order at T"
        )
    return _unwrap(_beta(sol, r), t)


def coefficients_at(sol: EquilibriumSolution, t: float) -> StepCoefficients:
    """
    Evaluate all pricing and trading coefficients at a single time.

    Args:
        sol: Calibrated equilibrium.
        t: Time in `[0, T)`.

    Returns:
        The coefficients `lambda, mu, beta, s, alpha, J` (and `r`).

    Raises:
        DomainError:
            For `t` outside `[0, T)`. Coefficients other than `beta` at `T`
            are available from the individual evaluators.
    """
    beta = beta_of_t(sol, t)
    r = _r(sol, np.array([t], dtype=float))
    lam = float(_lambda(sol, r)[0])
    alpha = float(_alpha(sol, r)[0])
    return StepCoefficients(
        t=t,
        r=float(r[0]),
        lambda_=lam,
        mu=-alpha * lam,
        beta=beta,
        s=-alpha * (1.0 + float(r[0])),
        alpha=alpha,
        J=float(_J(sol, r)[0]),
    )


def r_prime(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Analytic `r'(t) = -c (1+r)^3 / ((1+3r) sqrt(1+2r))`.
    """
    arr = _check_time(sol, t)
    return _unwrap(_r_prime(sol, _r(sol, arr)), t)


def J_prime(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Analytic `J'(t) = 2 I alpha (1+r) / (1+2r)`.
    """
    arr = _check_time(sol, t)
    r = _r(sol, arr)
    values = 2.0 * sol.I * _alpha(sol, r) * (1.0 + r) / (1.0 + 2.0 * r)
    return _unwrap(values, t)


def lambda_prime(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Analytic
    `lambda'(t) = -4 I c r (1+r)^4 / ((1+3r)(1+2r)^(5/2))`.

    The expression is stated on `(0, T)`; both endpoints are accepted by
    continuous extension (it vanishes at `T`).
    """
    arr = _check_time(sol, t)
    r = _r(sol, arr)
    values = (
        -4.0
        * sol.I
        * sol.c
        * r
        * (1.0 + r) ** 4
        / ((1.0 + 3.0 * r) * (1.0 + 2.0 * r) ** 2.5)
    )
    return _unwrap(values, t)


def K_prime(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    `K'(t) = -sigma_w^2 (I - J(t)) r(t)^2`.
    """
    arr = _check_time(sol, t)
    r = _r(sol, arr)
    values = -sol.params.sigma_w**2 * (sol.I - _J(sol, r)) * r * r
    return _unwrap(values, t)


def _K_integrand(r: float) -> float:
    # (I - J) r^2 / r' in the r variable, up to the factor sigma_w^2 I / c
    denominator = math.sqrt(1.0 + 2.0 * r) * (1.0 + r) ** 3
    return r * r * (1.0 + 3.0 * r) / denominator


def K_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Evaluate `K(t) = sigma_w^2 int_t^T (I - J(u)) r(u)^2 du`.

    The integral is taken in the variable `r = r(u)` (monotone in `u`, with
    `du = dr / r'(r)` and `I - J = -I / (1+2r)`), and evaluated by adaptive
    Gauss-Kronrod quadrature with absolute tolerance `1e-10`.

    Args:
        sol: Calibrated equilibrium.
        t: Time(s) in `[0, T]`.

    Returns:
        `K(t)`, which is non-positive and vanishes at `T`.
    """
    arr = _check_time(sol, t)
    r_values = _r(sol, arr)
    scale = -sol.params.sigma_w**2 * sol.I / sol.c
    values = np.empty_like(r_values)
    for ind, r_t in enumerate(r_values):
        if r_t == 0.0:
            values[ind] = 0.0
            continue
        integral, _abserr = quad(
            _K_integrand,
            0.0,
            float(r_t),
            epsabs=K_QUAD_EPSABS / abs(scale),
            epsrel=1e-12,
            limit=200,
        )
        values[ind] = scale * integral
    return _unwrap(values, t)


def _f(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    A, B = sol.A, sol.B
    return (
        1.0
        - A * (1.0 + 2.0 * r) ** 1.5 / (1.0 + r)
        + B * (1.0 + 2.0 * r) / (1.0 + r)
    )


def _g(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    A, B = sol.A, sol.B
    return (
        (1.0 + 2.0 * r)
        / (1.0 + r)
        * ((1.0 + r - r * r) * A / np.sqrt(1.0 + 2.0 * r) - B)
    )


def f_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Normalized expected holdings `f(t) = E[theta_t | a] / a`.

    At `t = T` the value is the left limit `f(T-)`, since the block order
    is not part of `f`.
    """
    arr = _check_time(sol, t)
    return _unwrap(_f(sol, _r(sol, arr)), t)


def g_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Normalized expected filter estimate `g(t) = E[Q_t | a] / a`.
    """
    arr = _check_time(sol, t)
    return _unwrap(_g(sol, _r(sol, arr)), t)


def _h(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    A, B = sol.A, sol.B
    return (
        (1.0 + r)
        * (A * (2.0 + r) - B / np.sqrt(1.0 + 2.0 * r))
        / (1.0 + 3.0 * r)
    )


def _h_prime(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    A, B = sol.A, sol.B
    u = (1.0 + r) / (1.0 + 3.0 * r)
    du = -2.0 / (1.0 + 3.0 * r) ** 2
    v = A * (2.0 + r) - B / np.sqrt(1.0 + 2.0 * r)
    dv = A + B / (1.0 + 2.0 * r) ** 1.5
    return du * v + u * dv


def fprime_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Normalized expected order rate `f'(t) = E[theta'_t | a] / a`.

    Finite on the closed interval: `f'(0) = beta(0)` and
    `f'(T-) = c (2A - B)`.
    """
    arr = _check_time(sol, t)
    return _unwrap(sol.c * _h(sol, _r(sol, arr)), t)


def fsecond_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Second derivative `f''(t)`; negative at `0` and positive at `T-`.
    """
    arr = _check_time(sol, t)
    r = _r(sol, arr)
    return _unwrap(sol.c * _h_prime(sol, r) * _r_prime(sol, r), t)


def block_fraction_closed_form(sol: EquilibriumSolution) -> float:
    """
    Expected fraction of the target executed by the terminal block order,
    `(sqrt(1+2r0) - 1 + r0 (r0 - 1)) / (r0 (1+2r0))`.
    """
    r0 = sol.r0
    return (math.sqrt(1.0 + 2.0 * r0) - 1.0 + r0 * (r0 - 1.0)) / (
        r0 * (1.0 + 2.0 * r0)
    )


def _sigma4(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    p = sol.params
    return _remaining_variance(sol, r) + (1.0 - p.rho**2) * p.sigma_v**2


def _remaining_variance(sol: EquilibriumSolution, r: np.ndarray) -> np.ndarray:
    p = sol.params
    r0 = sol.r0
    return (
        p.rho**2
        * p.sigma_v**2
        * math.sqrt(1.0 + 2.0 * r0)
        * (1.0 + r) ** 2
        / ((1.0 + r0) ** 2 * np.sqrt(1.0 + 2.0 * r))
    )


def sigma4_of_t(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Pricing error variance `Sigma_4(t) = E[(v - P_t)^2]`.
    """
    arr = _check_time(sol, t)
    return _unwrap(_sigma4(sol, _r(sol, arr)), t)


def remaining_variance(
    sol: EquilibriumSolution, t: ArrayOrFloat
) -> ArrayOrFloat:
    """
    Remaining variance `Sigma_4(t) - (1 - rho^2) sigma_v^2`, i.e. the part
    of the pricing error the order flow can still reveal.
    """
    arr = _check_time(sol, t)
    return _unwrap(_remaining_variance(sol, _r(sol, arr)), t)


def scaled_autocorrelation(
    sol: EquilibriumSolution, t: ArrayOrFloat, sigma3: ArrayOrFloat
) -> ArrayOrFloat:
    """
    Small-lag limit of the scaled autocorrelation of aggregate holdings,
    `alpha(t) (alpha(t) Sigma_3(t) / sigma_w^2 + r(t))`.

    The formula is extended continuously to `t = 0`, where `Sigma_3`
    vanishes and the value is `alpha(0) r0`.

    Args:
        sol: Calibrated equilibrium.
        t: Time(s) in `[0, T)`.
        sigma3: `Sigma_3(t) = E[Q_t^2]`, as computed by the ODE oracle.

    Raises:
        DomainError: For `t` outside `[0, T)` or negative `sigma3`.
    """
    arr = _check_time(sol, t, include_end=False)
    sigma3_arr = np.atleast_1d(np.asarray(sigma3, dtype=float))
    if np.any(sigma3_arr < 0.0) or not np.all(np.isfinite(sigma3_arr)):
        _raise_domain_error(
            f"sigma3 must be finite and non-negative (given {sigma3=})"
        )
    r = _r(sol, arr)
    alpha = _alpha(sol, r)
    values = alpha * (alpha * sigma3_arr / sol.params.sigma_w**2 + r)
    return _unwrap(values, t)


def beta_sq_sigma1(sol: EquilibriumSolution, t: ArrayOrFloat) -> ArrayOrFloat:
    """
    Closed form of `beta(t)^2 Sigma_1(t) = sigma_w^2 c (1+r)^2/(1+2r)^(3/2)`,
    which stays bounded as `t -> T`.
    """
    arr = _check_time(sol, t)
    r = _r(sol, arr)
    values = (
        sol.params.sigma_w**2 * sol.c * (1.0 + r) ** 2 / (1.0 + 2.0 * r) ** 1.5
    )
    return _unwrap(values, t)


def beta_sq_sigma1_bounds(sol: EquilibriumSolution) -> tuple[float, float]:
    """
    Minimum and maximum of `beta^2 Sigma_1` over `r` in `[0, r0]`.

    `(1+r)^2/(1+2r)^(3/2)` decreases on `[0, 1]` and increases afterwards.
    """
    candidates = [0.0, sol.r0]
    if sol.r0 > 1.0:
        candidates.append(1.0)
    scale = sol.params.sigma_w**2 * sol.c
    values = [
        scale * (1.0 + r) ** 2 / (1.0 + 2.0 * r) ** 1.5 for r in candidates
    ]
    return min(values), max(values)


def value_function(
    sol: EquilibriumSolution,
    t: float,
    x: ArrayOrFloat,
    q: ArrayOrFloat,
) -> ArrayOrFloat:
    """
    Insider's value function `V(t, x, q) = I x^2 + J(t) x q + K(t)`.

    `V(0, a, 0) = I a^2 + K(0)` is the insider's minimal expected trading
    cost for target `a`.
    """
    J = J_of_t(sol, t)
    K = K_of_t(sol, t)
    x_arr = np.asarray(x, dtype=float)
    q_arr = np.asarray(q, dtype=float)
    values = sol.I * x_arr * x_arr + J * x_arr * q_arr + K
    if np.ndim(values) == 0:
        return float(values)
    return values


def insider_expected_cost(sol: EquilibriumSolution) -> float:
    """
    Unconditional expected trading cost `I sigma_a^2 + K(0)`.
    """
    return sol.I * sol.params.sigma_a**2 + float(K_of_t(sol, 0.0))


def insider_expected_profit(
    sol: EquilibriumSolution,
    a: float,
    v: Optional[float] = None,
) -> float:
    """
    Expected profit of the insider holding target `a`.

    Args:
        sol: Calibrated equilibrium.
        a: Realized target.
        v:
            Realized dividend, when the insider also knows it. If unset, the
            conditional expectation `rho (sigma_v / sigma_a) a` is used.
            The trading cost `I a^2 + K(0)` does not depend on `v`, so the
            same strategy is optimal with and without knowledge of `v`.
    """
    p = sol.params
    if v is None:
        v = p.rho * p.sigma_v / p.sigma_a * a
    cost = sol.I * a * a + float(K_of_t(sol, 0.0))
    return v * a - cost
