# Copyright 2024 (C) The kyle-constrained authors
#
# This file is part of kyle-constrained, distributed under the BSD-3-Clause
# license.
"""
Monte Carlo simulation of the equilibrium price and holdings dynamics.

Paths are simulated with an explicit Euler-Maruyama scheme on the grid
`t_i = i T / n_steps`, with coefficients frozen at the left endpoint of each
interval. After the last interval `[T - dt, T)` the terminal block order and
the terminal price rule are applied exactly.

Path `i` draws all of its randomness from its own counter-based stream,
derived from `(seed, i)`, so that results do not depend on how paths are
split into chunks or on the dask scheduler executing them.
"""
import logging
import math
from dataclasses import dataclass
from dataclasses import replace
from typing import Callable
from typing import Literal
from typing import Mapping
from typing import Optional
from typing import Union

import dask
import numpy as np
import pandas as pd
from pydantic import BaseModel
from pydantic import Field
from pydantic import validator

from kyle_constrained.closed_form import _alpha
from kyle_constrained.closed_form import _beta
from kyle_constrained.closed_form import _lambda
from kyle_constrained.closed_form import _r
from kyle_constrained.closed_form import coefficients_at
from kyle_constrained.closed_form import EquilibriumSolution
from kyle_constrained.closed_form import ModelParams
from kyle_constrained.closed_form import StepCoefficients


logger = logging.getLogger(__name__)

RNG_NAME = "numpy.Philox"
SCALABLE_COEFFICIENTS = ("r", "lambda", "mu", "beta", "s", "alpha")
PATH_DUMP_COLUMNS = ["path", "t", "theta", "Q", "P", "Y"]

ArrayOrFloat = Union[float, np.ndarray]
BrownianOverride = Callable[[int], np.ndarray]


class SimulationError(RuntimeError):
    """
    Raised when a simulation produces non-finite states or cannot run.
    """

    pass


class SimConfig(BaseModel):
    """
    Monte Carlo configuration.

    Attributes:
        n_paths: Number of simulated paths.
        n_steps: Number of time steps on `[0, T]`.
        seed: Root seed of the per-path random streams.
        checkpoint_times:
            Times in `[0, T)` at which the path state is recorded; they are
            snapped to the nearest grid point. If unset, `0.25 T`, `0.5 T`
            and `0.75 T` are used.
        record_increments:
            Whether to record aggregate holdings around the autocorrelation
            times.
        autocorrelation_times: Times `t` for autocorrelation estimates
            (default `T/2`).
        autocorrelation_lags: Lags `h` for autocorrelation estimates
            (default `T/100`, `T/200`, `T/400`).
        chunk_size: Number of paths per dask task.
        scheduler: Dask scheduler.
        rng: Identifier of the bit generator (provenance only).
    """

    n_paths: int = Field(100_000, ge=1)
    n_steps: int = Field(2000, ge=2)
    seed: int = Field(42, ge=0, lt=2**64)
    checkpoint_times: Optional[list[float]] = None
    record_increments: bool = True
    autocorrelation_times: Optional[list[float]] = None
    autocorrelation_lags: Optional[list[float]] = None
    chunk_size: int = Field(1000, ge=1)
    scheduler: Literal["synchronous", "threads", "processes"] = "threads"
    rng: Literal["numpy.Philox"] = RNG_NAME

    class Config:
        allow_mutation = False
        extra = "forbid"

    @validator("checkpoint_times", "autocorrelation_times")
    def nonnegative_times(cls, v):
        """
        Check that requested times are non-negative.
        """
        if v is not None and any(t < 0.0 for t in v):
            raise ValueError(f"Times must be non-negative (given {v})")
        return v

    @validator("autocorrelation_lags")
    def positive_lags(cls, v):
        """
        Check that requested lags are strictly positive.
        """
        if v is not None and any(h <= 0.0 for h in v):
            raise ValueError(f"Lags must be strictly positive (given {v})")
        return v


@dataclass(frozen=True)
class PathState:
    """
    State of one path (or of a vector of paths) at time `t`.

    The insider's remaining unexpected gap `X = a - theta - Q` is derived
    from the stored fields and never stored on its own.
    """

    a_tilde: ArrayOrFloat
    v_tilde: ArrayOrFloat
    theta: ArrayOrFloat
    Q: ArrayOrFloat
    P: ArrayOrFloat
    Y: ArrayOrFloat
    t: float

    @property
    def X(self) -> ArrayOrFloat:
        return self.a_tilde - self.theta - self.Q


@dataclass(frozen=True)
class PathTerminal:
    """
    Terminal quantities of one path.

    Attributes:
        theta_Tminus: Holdings just before the block order.
        Q_Tminus: Filter estimate just before `T`.
        P_Tminus: Price just before `T`.
        P_T: Price after the terminal price rule.
        block: Block order `a - theta_Tminus`.
        X_Tminus: Remaining unexpected gap just before `T`.
        price_jump: `P_T - P_Tminus = lambda(T) X_Tminus`.
    """

    theta_Tminus: float
    Q_Tminus: float
    P_Tminus: float
    P_T: float
    block: float
    X_Tminus: float
    price_jump: float


class PathBatch(BaseModel):
    """
    Ensemble of simulated paths, stored in path order.

    Attributes:
        params: Model parameters of the simulated equilibrium.
        config: Simulation configuration.
        dt: Time step.
        checkpoint_indices: Grid indices of the (snapped) checkpoints.
        checkpoint_times: Snapped checkpoint times.
        a_tilde: Target draws, shape `(n_paths,)`.
        v_tilde: Dividend draws, shape `(n_paths,)`.
        states: Arrays `theta`, `Q`, `P`, `Y` of shape
            `(n_paths, n_checkpoints)`.
        y_record_indices: Grid indices at which `Y` was recorded for
            autocorrelation estimates.
        y_records: `Y` at `y_record_indices`, shape `(n_paths, n_records)`.
        terminal: Arrays `theta_Tminus`, `Q_Tminus`, `P_Tminus`, `P_T`,
            `block`, `X_Tminus`, `price_jump`, each of shape `(n_paths,)`.
        insider_cost: Per-path discretized `int (a - theta_{t-}) dP_t`,
            including the terminal price jump.
    """

    params: ModelParams
    config: SimConfig
    dt: float
    checkpoint_indices: list[int]
    checkpoint_times: list[float]
    a_tilde: np.ndarray
    v_tilde: np.ndarray
    states: dict[str, np.ndarray]
    y_record_indices: list[int]
    y_records: np.ndarray
    terminal: dict[str, np.ndarray]
    insider_cost: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @property
    def n_paths(self) -> int:
        return len(self.a_tilde)

    def state_at(self, checkpoint: int) -> PathState:
        """
        Vectorized path state at the `checkpoint`-th checkpoint.
        """
        return PathState(
            a_tilde=self.a_tilde,
            v_tilde=self.v_tilde,
            theta=self.states["theta"][:, checkpoint],
            Q=self.states["Q"][:, checkpoint],
            P=self.states["P"][:, checkpoint],
            Y=self.states["Y"][:, checkpoint],
            t=self.checkpoint_times[checkpoint],
        )

    def path_terminal(self, path_index: int) -> PathTerminal:
        return PathTerminal(
            **{
                key: float(values[path_index])
                for key, values in self.terminal.items()
            }
        )


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """
    Counter-based random stream of path `path_index`.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(path_index,))
    return np.random.Generator(np.random.Philox(sequence))


def draw_primitives(
    rng: np.random.Generator,
    params: ModelParams,
    n_steps: int,
    dt: float,
) -> tuple[float, float, np.ndarray]:
    """
    Draw the target, the dividend and the Brownian increments of one path.

    The dividend is `rho (sigma_v / sigma_a) a + sqrt(1 - rho^2) sigma_v eps`
    with `eps` independent of `a`.

    Args:
        rng: Random stream of the path.
        params: Model parameters.
        n_steps: Number of Brownian increments.
        dt: Time step (variance of each increment).

    Returns:
        `(a_tilde, v_tilde, dW)`.
    """
    a_tilde = params.sigma_a * rng.standard_normal()
    eps = rng.standard_normal()
    v_tilde = (
        params.rho * params.sigma_v / params.sigma_a * a_tilde
        + math.sqrt(1.0 - params.rho**2) * params.sigma_v * eps
    )
    dW = math.sqrt(dt) * rng.standard_normal(n_steps)
    return float(a_tilde), float(v_tilde), dW


def _advance(
    state: PathState,
    coefficients: StepCoefficients,
    dW: ArrayOrFloat,
    dt: float,
    sigma_w: float,
) -> PathState:
    # Insider order rate beta (a - theta - Q) + alpha Q
    theta_rate = (
        coefficients.beta * state.X + coefficients.alpha * state.Q
    )
    d_theta = theta_rate * dt
    dY = d_theta + sigma_w * dW
    return replace(
        state,
        theta=state.theta + d_theta,
        Q=state.Q + coefficients.r * dY + coefficients.s * state.Q * dt,
        P=state.P + coefficients.lambda_ * dY + coefficients.mu * state.Q * dt,
        Y=state.Y + dY,
        t=state.t + dt,
    )


def step(
    state: PathState,
    sol: EquilibriumSolution,
    dW: ArrayOrFloat,
    dt: float,
) -> PathState:
    """
    One explicit Euler-Maruyama step with coefficients at `state.t`.

    Args:
        state: Current state (scalar or vectorized over paths).
        sol: Calibrated equilibrium.
        dW: Brownian increment(s) over the step.
        dt: Step size; `state.t + dt` must not exceed `T`.

    Raises:
        SimulationError: If the step overshoots `T` or yields non-finite
            values.
    """
    if state.t + dt > sol.T * (1.0 + 1e-12):
        msg = f"Step from t={state.t} with {dt=} overshoots T={sol.T}"
        logger.error(msg)
        raise SimulationError(msg)
    new_state = _advance(
        state, coefficients_at(sol, state.t), dW, dt, sol.params.sigma_w
    )
    _check_finite(new_state)
    return new_state


def _check_finite(state: PathState) -> None:
    for name in ("theta", "Q", "P", "Y"):
        if not np.all(np.isfinite(getattr(state, name))):
            msg = f"Non-finite {name} at t={state.t}"
            logger.error(msg)
            raise SimulationError(msg)


def step_coefficients(
    sol: EquilibriumSolution,
    n_steps: int,
    coefficient_scaling: Optional[Mapping[str, float]] = None,
) -> tuple[list[StepCoefficients], float]:
    """
    Left-endpoint coefficients of every step, and `lambda(T)`.

    Args:
        sol: Calibrated equilibrium.
        n_steps: Number of steps on `[0, T]`.
        coefficient_scaling:
            Optional multiplicative perturbation of named coefficients
            (keys among `SCALABLE_COEFFICIENTS`), for negative controls.
            A `lambda` factor also applies to `lambda(T)`.
    """
    scaling = dict(coefficient_scaling or {})
    unknown = set(scaling) - set(SCALABLE_COEFFICIENTS)
    if unknown:
        raise ValueError(
            f"Cannot scale {sorted(unknown)}; "
            f"allowed keys: {SCALABLE_COEFFICIENTS}"
        )
    dt = sol.T / n_steps
    t = dt * np.arange(n_steps, dtype=float)
    r = _r(sol, t)
    if np.any(r <= 0.0):
        msg = f"r vanishes before T - dt ({n_steps=} is too large)"
        logger.error(msg)
        raise SimulationError(msg)
    lam = _lambda(sol, r)
    alpha = _alpha(sol, r)
    columns = {
        "r": r,
        "lambda": lam,
        "mu": -alpha * lam,
        "beta": _beta(sol, r),
        "s": -alpha * (1.0 + r),
        "alpha": alpha,
    }
    for key, factor in scaling.items():
        columns[key] = factor * columns[key]
    coefficients = [
        StepCoefficients(
            t=float(t[i]),
            r=float(columns["r"][i]),
            lambda_=float(columns["lambda"][i]),
            mu=float(columns["mu"][i]),
            beta=float(columns["beta"][i]),
            s=float(columns["s"][i]),
            alpha=float(columns["alpha"][i]),
            J=float(columns["lambda"][i] / (1.0 + columns["r"][i])),
        )
        for i in range(n_steps)
    ]
    lambda_T = float(_lambda(sol, np.zeros(1))[0]) * scaling.get("lambda", 1.0)
    return coefficients, lambda_T


def snap_to_grid(times: list[float], T: float, n_steps: int) -> list[int]:
    """
    Indices of the grid points `i T / n_steps` nearest to `times`.

    Raises:
        ValueError: If a time lies outside `[0, T)` or snaps onto `T`.
    """
    dt = T / n_steps
    indices = []
    for t in times:
        index = int(round(t / dt))
        if t < 0.0 or index >= n_steps:
            msg = f"Time {t} does not snap into [0, T) on the grid {dt=}"
            logger.error(msg)
            raise ValueError(msg)
        indices.append(index)
    return indices


def resolve_checkpoints(config: SimConfig, T: float) -> list[float]:
    if config.checkpoint_times is None:
        return [0.25 * T, 0.5 * T, 0.75 * T]
    return list(config.checkpoint_times)


def resolve_autocorrelation(
    config: SimConfig, T: float
) -> tuple[list[float], list[float]]:
    times = config.autocorrelation_times
    lags = config.autocorrelation_lags
    if times is None:
        times = [0.5 * T]
    if lags is None:
        lags = [T / 100.0, T / 200.0, T / 400.0]
    return list(times), list(lags)


def autocorrelation_indices(
    t: float, h: float, T: float, n_steps: int
) -> tuple[int, int, int]:
    """
    Grid indices of `(t - h, t, t + h)`, with `h` rounded to a positive
    multiple of the time step.

    Raises:
        ValueError: Unless `0 < t - h` and `t + h < T` on the grid.
    """
    dt = T / n_steps
    it = int(round(t / dt))
    ih = max(1, int(round(h / dt)))
    if it - ih <= 0 or it + ih >= n_steps:
        msg = (
            f"Autocorrelation window ({t=}, {h=}) must satisfy "
            f"0 < t-h and t+h < T on the grid {dt=}"
        )
        logger.error(msg)
        raise ValueError(msg)
    return it - ih, it, it + ih


def _record_plan(
    config: SimConfig, T: float
) -> tuple[list[int], list[float], list[int]]:
    checkpoint_indices = snap_to_grid(
        resolve_checkpoints(config, T), T, config.n_steps
    )
    dt = T / config.n_steps
    checkpoint_times = [index * dt for index in checkpoint_indices]
    y_indices: set[int] = set()
    if config.record_increments:
        times, lags = resolve_autocorrelation(config, T)
        for t in times:
            for h in lags:
                y_indices.update(
                    autocorrelation_indices(t, h, T, config.n_steps)
                )
    return checkpoint_indices, checkpoint_times, sorted(y_indices)


def _simulate_chunk(
    sol: EquilibriumSolution,
    config: SimConfig,
    path_indices: range,
    coefficients: list[StepCoefficients],
    lambda_T: float,
    checkpoint_indices: list[int],
    y_record_indices: list[int],
    brownian_override: Optional[BrownianOverride] = None,
) -> dict[str, np.ndarray]:
    params = sol.params
    n_steps = config.n_steps
    dt = sol.T / n_steps
    n = len(path_indices)

    a_tilde = np.empty(n)
    v_tilde = np.empty(n)
    dW = np.empty((n, n_steps))
    for row, path_index in enumerate(path_indices):
        rng = path_rng(config.seed, path_index)
        a_tilde[row], v_tilde[row], dW[row] = draw_primitives(
            rng, params, n_steps, dt
        )
        if brownian_override is not None:
            override = np.asarray(brownian_override(path_index), dtype=float)
            if override.shape != (n_steps,):
                msg = (
                    f"Injected increments for path {path_index} have shape "
                    f"{override.shape}, expected {(n_steps,)}"
                )
                logger.error(msg)
                raise SimulationError(msg)
            dW[row] = override

    zeros = np.zeros(n)
    state = PathState(
        a_tilde=a_tilde,
        v_tilde=v_tilde,
        theta=zeros,
        Q=zeros,
        P=zeros,
        Y=zeros,
        t=0.0,
    )
    checkpoint_position = {ind: k for k, ind in enumerate(checkpoint_indices)}
    y_position = {ind: k for k, ind in enumerate(y_record_indices)}
    states = {
        name: np.empty((n, len(checkpoint_indices)))
        for name in ("theta", "Q", "P", "Y")
    }
    y_records = np.empty((n, len(y_record_indices)))
    insider_cost = np.zeros(n)

    def _record(index: int, current: PathState) -> None:
        if index in checkpoint_position:
            k = checkpoint_position[index]
            for name in states:
                states[name][:, k] = getattr(current, name)
        if index in y_position:
            y_records[:, y_position[index]] = current.Y

    _record(0, state)
    for i in range(n_steps):
        new_state = _advance(
            state, coefficients[i], dW[:, i], dt, params.sigma_w
        )
        insider_cost += (a_tilde - state.theta) * (new_state.P - state.P)
        state = new_state
        if i + 1 in checkpoint_position or i + 1 in y_position:
            _check_finite(state)
            _record(i + 1, state)
    _check_finite(state)

    X_Tminus = state.X
    block = a_tilde - state.theta
    price_jump = lambda_T * X_Tminus
    insider_cost += block * price_jump
    return dict(
        a_tilde=a_tilde,
        v_tilde=v_tilde,
        y_records=y_records,
        insider_cost=insider_cost,
        theta_Tminus=state.theta,
        Q_Tminus=state.Q,
        P_Tminus=state.P,
        P_T=state.P + price_jump,
        block=block,
        X_Tminus=X_Tminus,
        price_jump=price_jump,
        **{f"state_{name}": values for name, values in states.items()},
    )


def run_batch(
    sol: EquilibriumSolution,
    config: SimConfig,
    *,
    brownian_override: Optional[BrownianOverride] = None,
    coefficient_scaling: Optional[Mapping[str, float]] = None,
) -> PathBatch:
    """
    Simulate `config.n_paths` independent paths.

    Paths are split into chunks of `config.chunk_size`, each chunk is a
    `dask.delayed` task, and the chunk results are concatenated in path
    order. The output only depends on `(seed, n_paths, n_steps)` and on the
    model, not on the chunking or the scheduler.

    Args:
        sol: Calibrated equilibrium.
        config: Simulation configuration.
        brownian_override:
            Test hook; if set, `brownian_override(path_index)` replaces the
            Brownian increments of each path.
        coefficient_scaling:
            Test hook scaling pricing/trading coefficients, see
            `step_coefficients`.

    Returns:
        The simulated batch.

    Raises:
        SimulationError: For non-finite states or resource exhaustion (no
            partial batch is returned).
    """
    T = sol.T
    checkpoint_indices, checkpoint_times, y_record_indices = _record_plan(
        config, T
    )
    coefficients, lambda_T = step_coefficients(
        sol, config.n_steps, coefficient_scaling
    )
    logger.info(
        f"Start run_batch with n_paths={config.n_paths}, "
        f"n_steps={config.n_steps}, seed={config.seed}, "
        f"scheduler={config.scheduler}"
    )

    chunks = [
        range(start, min(start + config.chunk_size, config.n_paths))
        for start in range(0, config.n_paths, config.chunk_size)
    ]
    tasks = [
        dask.delayed(_simulate_chunk)(
            sol,
            config,
            chunk,
            coefficients,
            lambda_T,
            checkpoint_indices,
            y_record_indices,
            brownian_override,
        )
        for chunk in chunks
    ]
    try:
        results = dask.compute(*tasks, scheduler=config.scheduler)
    except MemoryError as e:
        msg = f"Resource exhaustion while simulating paths ({e})"
        logger.error(msg)
        raise SimulationError(msg)

    def _concat(key: str) -> np.ndarray:
        return np.concatenate([result[key] for result in results], axis=0)

    batch = PathBatch(
        params=sol.params,
        config=config,
        dt=T / config.n_steps,
        checkpoint_indices=checkpoint_indices,
        checkpoint_times=checkpoint_times,
        a_tilde=_concat("a_tilde"),
        v_tilde=_concat("v_tilde"),
        states={
            name: _concat(f"state_{name}")
            for name in ("theta", "Q", "P", "Y")
        },
        y_record_indices=y_record_indices,
        y_records=_concat("y_records"),
        terminal={
            key: _concat(key)
            for key in (
                "theta_Tminus",
                "Q_Tminus",
                "P_Tminus",
                "P_T",
                "block",
                "X_Tminus",
                "price_jump",
            )
        },
        insider_cost=_concat("insider_cost"),
    )
    logger.info(f"End run_batch ({len(chunks)} chunks)")
    return batch


def run_path(
    sol: EquilibriumSolution,
    config: SimConfig,
    path_index: int,
    *,
    brownian_increments: Optional[np.ndarray] = None,
) -> tuple[list[PathState], PathTerminal]:
    """
    Simulate a single path, identical to path `path_index` of `run_batch`.

    Args:
        sol: Calibrated equilibrium.
        config: Simulation configuration.
        path_index: Index of the random stream.
        brownian_increments: Optional injected increments (test hook).

    Returns:
        The states at the checkpoints and the terminal quantities.
    """
    checkpoint_indices, checkpoint_times, _ = _record_plan(
        config.copy(update=dict(record_increments=False)), sol.T
    )
    coefficients, lambda_T = step_coefficients(sol, config.n_steps)
    override = None
    if brownian_increments is not None:
        increments = np.asarray(brownian_increments, dtype=float)

        def override(_index: int) -> np.ndarray:
            return increments

    result = _simulate_chunk(
        sol,
        config,
        range(path_index, path_index + 1),
        coefficients,
        lambda_T,
        checkpoint_indices,
        [],
        override,
    )
    records = [
        PathState(
            a_tilde=float(result["a_tilde"][0]),
            v_tilde=float(result["v_tilde"][0]),
            theta=float(result["state_theta"][0, k]),
            Q=float(result["state_Q"][0, k]),
            P=float(result["state_P"][0, k]),
            Y=float(result["state_Y"][0, k]),
            t=checkpoint_times[k],
        )
        for k in range(len(checkpoint_indices))
    ]
    terminal = PathTerminal(
        theta_Tminus=float(result["theta_Tminus"][0]),
        Q_Tminus=float(result["Q_Tminus"][0]),
        P_Tminus=float(result["P_Tminus"][0]),
        P_T=float(result["P_T"][0]),
        block=float(result["block"][0]),
        X_Tminus=float(result["X_Tminus"][0]),
        price_jump=float(result["price_jump"][0]),
    )
    return records, terminal


def dump_paths(batch: PathBatch, *, max_paths: int = 100) -> pd.DataFrame:
    """
    Raw checkpoint states of the first `max_paths` paths, one row per
    (path, checkpoint), with columns `PATH_DUMP_COLUMNS`.
    """
    n = min(max_paths, batch.n_paths)
    n_checkpoints = len(batch.checkpoint_times)
    frame = pd.DataFrame(
        {
            "path": np.repeat(np.arange(n), n_checkpoints),
            "t": np.tile(np.asarray(batch.checkpoint_times), n),
            "theta": batch.states["theta"][:n].reshape(-1),
            "Q": batch.states["Q"][:n].reshape(-1),
            "P": batch.states["P"][:n].reshape(-1),
            "Y": batch.states["Y"][:n].reshape(-1),
        },
        columns=PATH_DUMP_COLUMNS,
    )
    return frame
