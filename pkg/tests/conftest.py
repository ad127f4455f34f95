import math

import pytest
from hypothesis import strategies as st

from kyle_constrained.calibrate import build_solution
from kyle_constrained.closed_form import EquilibriumSolution
from kyle_constrained.closed_form import ModelParams


# Horizon for which sigma_w = sigma_a = 1 calibrates to r0 = 1
TAU_ONE = (math.pi / 3.0 + 3.0 - 7.0 * math.sqrt(3.0) / 4.0) / (
    3.0 * math.sqrt(3.0) / 4.0
)


def _bounded(min_value: float, max_value: float) -> st.SearchStrategy:
    return st.floats(
        min_value=min_value,
        max_value=max_value,
        allow_nan=False,
        allow_infinity=False,
    )


# Volatilities in [0.2, 5], rho in (0, 1] and T in [0.1, 5]
valid_params = st.builds(
    ModelParams,
    sigma_w=_bounded(0.2, 5.0),
    sigma_a=_bounded(0.2, 5.0),
    sigma_v=_bounded(0.2, 5.0),
    rho=st.floats(min_value=0.0, max_value=1.0, exclude_min=True),
    T=_bounded(0.1, 5.0),
)

# Volatilities and horizon in [0.5, 2], rho in [0.1, 1]
moderate_params = st.builds(
    ModelParams,
    sigma_w=_bounded(0.5, 2.0),
    sigma_a=_bounded(0.5, 2.0),
    sigma_v=_bounded(0.5, 2.0),
    rho=_bounded(0.1, 1.0),
    T=_bounded(0.5, 2.0),
)


@pytest.fixture(scope="session")
def figure_params() -> ModelParams:
    return ModelParams(sigma_w=1.0, sigma_a=1.0, sigma_v=1.0, rho=0.3, T=1.0)


@pytest.fixture(scope="session")
def unit_params() -> ModelParams:
    return ModelParams(
        sigma_w=1.0, sigma_a=1.0, sigma_v=1.0, rho=0.3, T=TAU_ONE
    )


@pytest.fixture(scope="session")
def figure_solution(figure_params) -> EquilibriumSolution:
    return build_solution(figure_params)


@pytest.fixture(scope="session")
def unit_solution(unit_params) -> EquilibriumSolution:
    return build_solution(unit_params)
