import pytest
from devtools import debug
from hypothesis import given
from hypothesis import settings

from .conftest import moderate_params
from kyle_constrained.calibrate import build_solution
from kyle_constrained.checks import CHECK_COLUMNS
from kyle_constrained.checks import run_invariant_suite


HJB_CHECKS = ["hjb_xx", "hjb_xq", "hjb_q", "hjb_qq", "hjb_constant"]
FILTER_CHECKS = [
    "filter_lambda",
    "filter_r",
    "filter_mu",
    "filter_s",
    "sigma2_identity",
]


def _failing(matrix) -> list[str]:
    return matrix.loc[~matrix["passed"], "check"].tolist()


def test_run_invariant_suite(unit_solution):
    """
    GIVEN the calibrated equilibrium
    WHEN the full invariant suite runs, oracle comparisons included
    THEN every check passes
    """
    matrix = run_invariant_suite(unit_solution, oracle_steps=20_000)
    debug(matrix)
    assert list(matrix.columns) == CHECK_COLUMNS
    assert _failing(matrix) == []
    checks = set(matrix["check"])
    for name in HJB_CHECKS + FILTER_CHECKS:
        assert name in checks
    for name in [
        "terminal_r",
        "terminal_sigma1",
        "terminal_lambda",
        "terminal_J",
        "sign_pattern",
        "lambda_decreasing",
        "fsecond_start_negative",
        "fsecond_end_positive",
        "block_fraction_positive",
        "block_fraction_below_one",
        "oracle_r",
        "oracle_K0",
        "rk4_order_r_sigma1",
        "rk4_order_K",
    ]:
        assert name in checks


@given(params=moderate_params)
@settings(deadline=None, max_examples=5)
def test_run_invariant_suite_without_oracle(params):
    sol = build_solution(params)
    matrix = run_invariant_suite(sol, include_oracle=False)
    debug(params, _failing(matrix))
    assert _failing(matrix) == []
    assert not any(matrix["check"].str.startswith("oracle_"))


@pytest.mark.parametrize(
    "scaling,expected",
    [
        ({"J": 1.01}, "hjb_xq"),
        ({"lambda": 1.001}, "hjb_xx"),
        ({"lambda": 1.001}, "filter_lambda"),
        ({"s": 0.99}, "filter_s"),
    ],
)
def test_perturbed_coefficients_fail(unit_solution, scaling, expected):
    """
    GIVEN a coefficient perturbed away from its equilibrium value
    WHEN the identities are re-evaluated
    THEN the affected check fails
    """
    matrix = run_invariant_suite(
        unit_solution, include_oracle=False, coefficient_scaling=scaling
    )
    failing = _failing(matrix)
    debug(scaling, failing)
    assert expected in failing
    # Shape and terminal facts do not depend on the perturbation
    assert "terminal_r" not in failing
    assert "sign_pattern" not in failing


def test_run_invariant_suite_invalid_arguments(unit_solution):
    with pytest.raises(ValueError) as e:
        run_invariant_suite(
            unit_solution, include_oracle=False, coefficient_scaling={"K": 2}
        )
    debug(e.value)
    with pytest.raises(ValueError):
        run_invariant_suite(unit_solution, grid_points=1)
