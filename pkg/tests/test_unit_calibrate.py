import numpy as np
import pytest
from devtools import debug
from hypothesis import given
from hypothesis import settings

from .conftest import TAU_ONE
from .conftest import valid_params
from kyle_constrained.calibrate import calibrate_r0
from kyle_constrained.calibrate import CalibrationError
from kyle_constrained.calibrate import CalibrationResult
from kyle_constrained.calibrate import GRID_COLUMNS
from kyle_constrained.calibrate import sample_grid
from kyle_constrained.closed_form import K_of_t
from kyle_constrained.closed_form import lambda_of_t
from kyle_constrained.closed_form import ModelParams
from kyle_constrained.closed_form import sigma1_of_t
from kyle_constrained.closed_form import tau


def test_calibrate_r0_known_root(unit_params):
    result = calibrate_r0(unit_params)
    debug(result)
    assert result.r0 == pytest.approx(1.0, rel=1e-10)
    assert result.residual <= 1e-12
    lo, hi = result.bracket
    assert lo <= result.r0 <= hi


@given(params=valid_params)
@settings(deadline=None, max_examples=100)
def test_calibrate_r0_random_parameters(params):
    """
    GIVEN a random valid parameter set
    WHEN r0 is calibrated
    THEN tau(r0) reproduces the horizon within the calibration tolerance
    """
    result = calibrate_r0(params)
    tolerance = 1e-12 * max(1.0, params.T)
    assert result.residual <= tolerance
    assert abs(tau(result.r0, params) - params.T) <= tolerance
    assert result.r0 > 0.0


@pytest.mark.parametrize(
    "T,expected_direction",
    [(1e-3, "large"), (1e3, "small")],
)
def test_calibrate_r0_extreme_horizons(T, expected_direction):
    result = calibrate_r0(ModelParams(T=T))
    debug(result)
    if expected_direction == "large":
        assert result.r0 > 1.0
    else:
        assert result.r0 < 1.0


def test_calibrate_r0_failure():
    """
    GIVEN a noise ratio that underflows to zero
    WHEN r0 is calibrated
    THEN a CalibrationError is raised
    """
    params = ModelParams(sigma_w=1e-200, sigma_a=1e200)
    with pytest.raises(CalibrationError) as e:
        calibrate_r0(params)
    debug(e.value)


def test_CalibrationResult_validation():
    CalibrationResult(r0=1.0, residual=0.0, iterations=3, bracket=(0.5, 2.0))
    with pytest.raises(ValueError) as e:
        CalibrationResult(
            r0=1.0, residual=0.0, iterations=3, bracket=(2.0, 0.5)
        )
    debug(e.value)
    with pytest.raises(ValueError):
        CalibrationResult(
            r0=3.0, residual=0.0, iterations=3, bracket=(0.5, 2.0)
        )


def test_sample_grid(unit_solution):
    sol = unit_solution
    grid = sample_grid(sol, 101)
    debug(grid.table.head())
    assert list(grid.table.columns) == GRID_COLUMNS
    assert len(grid.table) == 101
    t = grid.t
    assert t[0] == 0.0
    assert t[-1] == sol.T
    np.testing.assert_allclose(np.diff(t), sol.T / 100, rtol=1e-12)

    # beta is undefined at T only
    beta = grid.column("beta")
    assert np.isnan(beta[-1])
    assert np.all(np.isfinite(beta[:-1]))
    assert not grid.beta_defined[-1]
    assert np.all(grid.beta_defined[:-1])

    np.testing.assert_allclose(
        grid.column("lambda"), lambda_of_t(sol, t), rtol=1e-14
    )
    np.testing.assert_allclose(
        grid.column("Sigma1"), sigma1_of_t(sol, t), rtol=1e-14, atol=1e-300
    )
    np.testing.assert_allclose(grid.column("K"), K_of_t(sol, t), rtol=1e-14)
    assert grid.column("r")[0] == pytest.approx(1.0, rel=1e-10)


def test_sample_grid_too_small(unit_solution):
    with pytest.raises(ValueError) as e:
        sample_grid(unit_solution, 1)
    debug(e.value)
    grid = sample_grid(unit_solution, 2)
    assert grid.t.tolist() == [0.0, TAU_ONE]


def test_attach_column(unit_solution):
    grid = sample_grid(unit_solution, 11)
    extended = grid.attach_column("Sigma3", np.arange(11.0), after="Sigma2")
    columns = list(extended.table.columns)
    debug(columns)
    assert columns.index("Sigma3") == columns.index("Sigma2") + 1
    assert len(columns) == len(GRID_COLUMNS) + 1
    # The original grid is left untouched
    assert list(grid.table.columns) == GRID_COLUMNS

    last = grid.attach_column("extra", np.zeros(11))
    assert list(last.table.columns)[-1] == "extra"

    with pytest.raises(ValueError) as e:
        grid.attach_column("Sigma3", np.zeros(5))
    debug(e.value)
