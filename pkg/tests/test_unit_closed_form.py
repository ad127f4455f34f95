import math

import numpy as np
import pytest
from devtools import debug
from hypothesis import assume
from hypothesis import given
from hypothesis import settings
from hypothesis import strategies as st

from .conftest import valid_params
from kyle_constrained.calibrate import build_solution
from kyle_constrained.closed_form import alpha_of_t
from kyle_constrained.closed_form import beta_of_t
from kyle_constrained.closed_form import beta_sq_sigma1
from kyle_constrained.closed_form import beta_sq_sigma1_bounds
from kyle_constrained.closed_form import block_fraction_closed_form
from kyle_constrained.closed_form import coefficients_at
from kyle_constrained.closed_form import DomainError
from kyle_constrained.closed_form import EquilibriumSolution
from kyle_constrained.closed_form import F
from kyle_constrained.closed_form import F_inv
from kyle_constrained.closed_form import F_MAX
from kyle_constrained.closed_form import F_MIN
from kyle_constrained.closed_form import f_of_t
from kyle_constrained.closed_form import F_offset
from kyle_constrained.closed_form import fprime_of_t
from kyle_constrained.closed_form import fsecond_of_t
from kyle_constrained.closed_form import G
from kyle_constrained.closed_form import g_of_t
from kyle_constrained.closed_form import I_from_r0
from kyle_constrained.closed_form import insider_expected_cost
from kyle_constrained.closed_form import insider_expected_profit
from kyle_constrained.closed_form import J_of_t
from kyle_constrained.closed_form import K_of_t
from kyle_constrained.closed_form import K_prime
from kyle_constrained.closed_form import lambda_of_t
from kyle_constrained.closed_form import lambda_prime
from kyle_constrained.closed_form import ModelParams
from kyle_constrained.closed_form import mu_of_t
from kyle_constrained.closed_form import r_of_t
from kyle_constrained.closed_form import remaining_variance
from kyle_constrained.closed_form import s_of_t
from kyle_constrained.closed_form import scaled_autocorrelation
from kyle_constrained.closed_form import sigma1_of_t
from kyle_constrained.closed_form import sigma2_of_t
from kyle_constrained.closed_form import sigma4_of_t
from kyle_constrained.closed_form import tau
from kyle_constrained.closed_form import tau_prime
from kyle_constrained.closed_form import value_function


def test_F_special_values():
    assert F(0.0) == pytest.approx(math.pi - 3.0, abs=1e-15)
    expected_F1 = 4.0 * math.pi / 3.0 - 7.0 * math.sqrt(3.0) / 4.0
    assert F(1.0) == pytest.approx(expected_F1, rel=1e-14)
    # Approaches 2 pi from below
    assert F_MAX - 1e-3 < F(1e8) < F_MAX
    assert G(0.0) == 0.0
    assert G(1.0) == pytest.approx(3.0 * math.sqrt(3.0) / 4.0, rel=1e-14)

    # Vectorized evaluation
    values = F(np.array([0.0, 1.0]))
    debug(values)
    assert isinstance(values, np.ndarray)
    assert values.shape == (2,)


def test_F_offset_is_accurate_for_small_arguments():
    # F'(0) = 1
    for x in [1e-12, 1e-8, 1e-5]:
        assert F_offset(x) == pytest.approx(x, rel=10 * x)
    assert F_offset(1.0) == pytest.approx(F(1.0) - F(0.0), rel=1e-13)


@pytest.mark.parametrize("x", [1e-4, 0.01, 0.5, 1.0, 3.0, 10.0])
def test_F_inv(x):
    y = F(x)
    assert F_inv(y) == pytest.approx(x, rel=1e-9)


@given(
    pair=st.tuples(
        st.floats(min_value=0.0, max_value=50.0),
        st.floats(min_value=0.0, max_value=50.0),
    )
)
@settings(deadline=None, max_examples=500)
def test_F_is_strictly_increasing(pair):
    x, y = sorted(pair)
    # Pairs closer than this cannot be told apart in double precision
    assume(y - x > 1e-6 * (1.0 + y))
    assert F(x) < F(y)
    assert F_MIN <= F(x) < F_MAX


@given(x=st.floats(min_value=0.0, max_value=50.0))
@settings(deadline=None, max_examples=500)
def test_F_inv_inverts_F(x):
    assert abs(F_inv(F(x)) - x) <= 1e-10 * (1.0 + x)


def test_F_inv_edges():
    assert F_inv(F_MIN) == 0.0
    for y in [F_MIN - 1e-3, F_MAX, 7.0, math.nan]:
        with pytest.raises(DomainError) as e:
            F_inv(y)
        debug(e.value)


@pytest.mark.parametrize("x", [-1.0, -1e-300, math.inf, math.nan])
def test_special_functions_reject_invalid_arguments(x):
    with pytest.raises(DomainError) as e:
        F(x)
    debug(e.value)
    with pytest.raises(DomainError):
        G(x)


def test_tau(unit_params):
    """
    GIVEN sigma_w = sigma_a = 1
    WHEN tau is evaluated at 1
    THEN it matches the hand-derived value and its analytic derivative
        matches a finite difference
    """
    assert tau(1.0, unit_params) == pytest.approx(0.7822022, abs=1e-7)
    assert tau(1.0, unit_params) == pytest.approx(unit_params.T, rel=1e-14)
    # tau is decreasing
    xs = np.geomspace(1e-3, 1e3, 50)
    assert np.all(np.diff(tau(xs, unit_params)) < 0.0)
    h = 1e-6
    fd = (tau(1.0 + h, unit_params) - tau(1.0 - h, unit_params)) / (2 * h)
    assert tau_prime(1.0, unit_params) == pytest.approx(fd, rel=1e-7)
    with pytest.raises(DomainError) as e:
        tau(0.0, unit_params)
    debug(e.value)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(sigma_w=0.0),
        dict(sigma_a=-1.0),
        dict(sigma_v=math.inf),
        dict(T=-1.0),
        dict(T=math.nan),
        dict(rho=0.0),
        dict(rho=1.5),
        dict(unknown=1.0),
    ],
)
def test_ModelParams_invalid(kwargs):
    with pytest.raises(ValueError) as e:
        ModelParams(**kwargs)
    debug(e.value)


def test_ModelParams_valid():
    params = ModelParams()
    debug(params)
    assert params.dict() == dict(
        sigma_w=1.0, sigma_a=1.0, sigma_v=1.0, rho=0.3, T=1.0
    )
    assert ModelParams(rho=1.0).rho == 1.0
    assert ModelParams(sigma_w=2.0, sigma_a=4.0).noise_ratio == 0.25
    with pytest.raises(TypeError):
        params.T = 2.0


def test_EquilibriumSolution_consistency(unit_params):
    I = I_from_r0(unit_params, 1.0)
    # I = rho sigma_v / sigma_a * r0 (1+2r0) / (2 (1+r0)^2)
    assert I == pytest.approx(0.3 * 3.0 / 8.0, rel=1e-15)
    sol = EquilibriumSolution(params=unit_params, r0=1.0, I=I)
    assert sol.c == pytest.approx(G(1.0), rel=1e-15)
    with pytest.raises(ValueError) as e:
        EquilibriumSolution(params=unit_params, r0=1.0, I=1.1 * I)
    debug(e.value)
    with pytest.raises(ValueError):
        EquilibriumSolution(params=unit_params, r0=-1.0, I=I)


def test_initial_values(figure_solution):
    sol = figure_solution
    p = sol.params
    assert r_of_t(sol, 0.0) == pytest.approx(sol.r0, rel=1e-13)
    assert sigma1_of_t(sol, 0.0) == pytest.approx(p.sigma_a**2, rel=1e-12)
    assert sigma2_of_t(sol, 0.0) == pytest.approx(
        p.rho * p.sigma_a * p.sigma_v, rel=1e-12
    )
    assert sigma4_of_t(sol, 0.0) == pytest.approx(p.sigma_v**2, rel=1e-12)
    assert remaining_variance(sol, 0.0) == pytest.approx(
        p.rho**2 * p.sigma_v**2, rel=1e-12
    )
    assert f_of_t(sol, 0.0) == pytest.approx(0.0, abs=1e-13)
    assert g_of_t(sol, 0.0) == pytest.approx(0.0, abs=1e-13)
    assert fprime_of_t(sol, 0.0) == pytest.approx(
        beta_of_t(sol, 0.0), rel=1e-12
    )


def test_terminal_values(figure_solution):
    sol = figure_solution
    p = sol.params
    T = sol.T
    r0 = sol.r0
    assert r_of_t(sol, T) <= 1e-8
    assert sigma1_of_t(sol, T) <= 1e-8 * p.sigma_a**2
    assert lambda_of_t(sol, T) == pytest.approx(2.0 * sol.I, rel=1e-12)
    assert J_of_t(sol, T) == pytest.approx(2.0 * sol.I, rel=1e-10)
    assert K_of_t(sol, T) == pytest.approx(0.0, abs=1e-12)
    assert remaining_variance(sol, T) == pytest.approx(
        p.rho**2 * p.sigma_v**2 * math.sqrt(1 + 2 * r0) / (1 + r0) ** 2,
        rel=1e-10,
    )
    assert remaining_variance(sol, T) > 0.0
    fraction = block_fraction_closed_form(sol)
    assert 1.0 - f_of_t(sol, T) == pytest.approx(fraction, abs=1e-10)
    assert g_of_t(sol, T) == pytest.approx(fraction, abs=1e-10)


@given(params=valid_params)
@settings(deadline=None, max_examples=20)
def test_boundary_conditions_for_random_parameters(params):
    """
    GIVEN a random valid parameter set
    WHEN the equilibrium is calibrated
    THEN r and Sigma_1 vanish at T and the block fraction lies in (0, 1)
    """
    sol = build_solution(params)
    debug(params, sol.r0)
    assert abs(r_of_t(sol, params.T)) <= 1e-8
    assert abs(sigma1_of_t(sol, params.T)) <= 1e-8 * params.sigma_a**2
    assert 0.0 < block_fraction_closed_form(sol) < 1.0


def test_block_fraction_at_r0_one(unit_params):
    sol = EquilibriumSolution(
        params=unit_params, r0=1.0, I=I_from_r0(unit_params, 1.0)
    )
    fraction = block_fraction_closed_form(sol)
    assert fraction == pytest.approx((math.sqrt(3.0) - 1.0) / 3.0, rel=1e-15)
    assert fraction == pytest.approx(0.2440169, abs=1e-7)

    # Small r0 limit
    small = EquilibriumSolution(
        params=unit_params, r0=1e-6, I=I_from_r0(unit_params, 1e-6)
    )
    assert 0.0 < block_fraction_closed_form(small) < 1e-5


def test_time_domain(figure_solution):
    sol = figure_solution
    T = sol.T
    for t in [-1e-9, T * (1 + 1e-9), math.nan]:
        with pytest.raises(DomainError) as e:
            r_of_t(sol, t)
        debug(e.value)
    with pytest.raises(DomainError) as e:
        beta_of_t(sol, T)
    debug(e.value)
    with pytest.raises(DomainError):
        coefficients_at(sol, T)
    with pytest.raises(DomainError):
        scaled_autocorrelation(sol, T, 0.1)
    with pytest.raises(DomainError):
        scaled_autocorrelation(sol, 0.5, -1.0)

    # Scalars in, floats out; arrays in, arrays out
    assert isinstance(lambda_of_t(sol, 0.5), float)
    values = lambda_of_t(sol, np.array([0.0, 0.5, T]))
    assert isinstance(values, np.ndarray)
    assert values.shape == (3,)


def test_coefficients_at(figure_solution):
    sol = figure_solution
    t = 0.4
    coefficients = coefficients_at(sol, t)
    debug(coefficients)
    assert coefficients.t == t
    assert coefficients.r == pytest.approx(r_of_t(sol, t), rel=1e-15)
    assert coefficients.lambda_ == pytest.approx(lambda_of_t(sol, t))
    assert coefficients.mu == pytest.approx(mu_of_t(sol, t))
    assert coefficients.s == pytest.approx(s_of_t(sol, t))
    assert coefficients.alpha == pytest.approx(alpha_of_t(sol, t))
    assert coefficients.beta == pytest.approx(beta_of_t(sol, t))
    assert coefficients.J == pytest.approx(J_of_t(sol, t))
    assert coefficients.dict(by_alias=True)["lambda"] == coefficients.lambda_


def test_sign_pattern_and_monotonicity(figure_solution):
    sol = figure_solution
    t = np.linspace(0.0, sol.T, 1001)[:-1]
    assert np.all(lambda_of_t(sol, t) > 0.0)
    assert np.all(beta_of_t(sol, t) > 0.0)
    assert np.all(alpha_of_t(sol, t) > 0.0)
    assert np.all(mu_of_t(sol, t) < 0.0)
    assert np.all(s_of_t(sol, t) < 0.0)
    assert np.all(np.diff(lambda_of_t(sol, t)) < 0.0)
    assert np.all(np.diff(r_of_t(sol, t)) < 0.0)
    assert np.all(np.diff(sigma4_of_t(sol, t)) < 0.0)


def test_derivatives(figure_solution):
    sol = figure_solution
    h = 1e-5
    for t in [0.1, 0.5, 0.9]:
        fd_lambda = (lambda_of_t(sol, t + h) - lambda_of_t(sol, t - h)) / (
            2 * h
        )
        assert lambda_prime(sol, t) == pytest.approx(fd_lambda, rel=1e-6)
        fd_f = (f_of_t(sol, t + h) - f_of_t(sol, t - h)) / (2 * h)
        assert fprime_of_t(sol, t) == pytest.approx(fd_f, rel=1e-6)
        fd_fprime = (fprime_of_t(sol, t + h) - fprime_of_t(sol, t - h)) / (
            2 * h
        )
        assert fsecond_of_t(sol, t) == pytest.approx(
            fd_fprime, rel=1e-4, abs=1e-6
        )
        hK = 1e-3
        fd_K = (K_of_t(sol, t + hK) - K_of_t(sol, t - hK)) / (2 * hK)
        assert K_prime(sol, t) == pytest.approx(fd_K, rel=1e-4, abs=1e-6)
    assert lambda_prime(sol, sol.T) == pytest.approx(0.0, abs=1e-9)


@given(params=valid_params)
@settings(deadline=None, max_examples=10)
def test_fsecond_endpoint_signs(params):
    sol = build_solution(params)
    r0 = sol.r0
    f2_start = fsecond_of_t(sol, 0.0)
    expected_start = -(params.sigma_w**4) * r0**4
    expected_start /= params.sigma_a**4 * (1.0 + 3.0 * r0)
    debug(params, r0, f2_start)
    assert f2_start < 0.0
    # A and B nearly cancel for small r0
    assert f2_start == pytest.approx(expected_start, rel=1e-6)
    f2_end = fsecond_of_t(sol, params.T)
    assert f2_end > 0.0
    assert f2_end == pytest.approx(
        3.0 * sol.c**2 * (sol.A - sol.B), rel=1e-6
    )


def test_K(figure_solution):
    sol = figure_solution
    K0 = K_of_t(sol, 0.0)
    debug(K0)
    assert K0 < 0.0
    values = K_of_t(sol, np.linspace(0.0, sol.T, 11))
    # K increases toward its terminal value 0
    assert np.all(np.diff(values) > 0.0)


def test_beta_sq_sigma1(figure_solution, unit_solution):
    for sol in [figure_solution, unit_solution]:
        t = np.linspace(0.0, sol.T, 501)
        values = beta_sq_sigma1(sol, t)
        lo, hi = beta_sq_sigma1_bounds(sol)
        debug(lo, hi)
        assert np.all(values >= lo * (1 - 1e-12))
        assert np.all(values <= hi * (1 + 1e-12))
        # Agreement with the product of the separate evaluators
        direct = beta_of_t(sol, t[:-1]) ** 2 * sigma1_of_t(sol, t[:-1])
        np.testing.assert_allclose(direct, values[:-1], rtol=1e-12)


def test_scaled_autocorrelation(figure_params):
    """
    GIVEN two parameter sets differing only in rho
    WHEN the scaled autocorrelation target is evaluated
    THEN both targets coincide and are positive
    """
    sol_low = build_solution(figure_params.copy(update=dict(rho=0.3)))
    sol_high = build_solution(figure_params.copy(update=dict(rho=0.9)))
    t = np.linspace(0.0, 0.99, 50)
    sigma3 = np.linspace(0.0, 0.2, 50)
    low = scaled_autocorrelation(sol_low, t, sigma3)
    high = scaled_autocorrelation(sol_high, t, sigma3)
    np.testing.assert_array_equal(low, high)
    assert np.all(low > 0.0)
    assert scaled_autocorrelation(sol_low, 0.0, 0.0) == pytest.approx(
        alpha_of_t(sol_low, 0.0) * sol_low.r0, rel=1e-15
    )


def test_value_function_and_profit(figure_solution):
    sol = figure_solution
    p = sol.params
    K0 = K_of_t(sol, 0.0)
    assert value_function(sol, 0.0, 2.0, 0.0) == pytest.approx(
        4.0 * sol.I + K0, rel=1e-14
    )
    assert insider_expected_cost(sol) == pytest.approx(
        sol.I * p.sigma_a**2 + K0, rel=1e-14
    )
    a = 1.5
    default = insider_expected_profit(sol, a)
    assert default == pytest.approx(
        p.rho * p.sigma_v / p.sigma_a * a * a - (sol.I * a * a + K0),
        rel=1e-14,
    )
    # Knowing the dividend only changes the revenue term
    informed = insider_expected_profit(sol, a, v=2.0)
    assert informed - default == pytest.approx(
        (2.0 - p.rho * p.sigma_v / p.sigma_a * a) * a, rel=1e-12
    )
