# Copyright 2024 (C) The kyle-constrained authors
#
# This file is part of kyle-constrained, distributed under the BSD-3-Clause
# license.
"""
Command-line front end.

Five commands are available: `calibrate`, `curves`, `simulate`, `figures`
and `verify`. Every command echoes its fully-resolved configuration as
`run_config.json` into the output directory, and
`kyle-constrained --json run_config.json` replays it.

Exit codes: 0 success, 2 usage or invalid parameters, 3 calibration
failure, 4 I/O failure, 5 failed verification.
"""
import logging
import math
import sys
from argparse import ArgumentParser
from argparse import ArgumentTypeError
from argparse import Namespace
from pathlib import Path
from typing import Any
from typing import Literal
from typing import Optional
from typing import Sequence

import pandas as pd
from pydantic import BaseModel
from pydantic import Field
from pydantic import validate_arguments
from pydantic import validator

from kyle_constrained.analysis import autocorrelation_table
from kyle_constrained.analysis import check_figure_shapes
from kyle_constrained.analysis import compare_moments
from kyle_constrained.analysis import figure_series
from kyle_constrained.calibrate import build_solution
from kyle_constrained.calibrate import calibrate_r0
from kyle_constrained.calibrate import CalibrationError
from kyle_constrained.calibrate import sample_grid
from kyle_constrained.checks import run_invariant_suite
from kyle_constrained.closed_form import I_from_r0
from kyle_constrained.closed_form import ModelParams
from kyle_constrained.oracle import BlowUpError
from kyle_constrained.oracle import integrate_sigma3
from kyle_constrained.simulate import dump_paths as dump_path_table
from kyle_constrained.simulate import run_batch
from kyle_constrained.simulate import SimConfig
from kyle_constrained.simulate import SimulationError
from kyle_constrained.tables import OutputFormat
from kyle_constrained.tables import OverwriteNotAllowedError
from kyle_constrained.tables import prepare_output_dir
from kyle_constrained.tables import write_json
from kyle_constrained.tables import write_table


logger = logging.getLogger(__name__)

COMMANDS = ("calibrate", "curves", "simulate", "figures", "verify")
DEFAULT_OUT = Path("kyle_output")
DEFAULT_GRID = 1001
DEFAULT_FIGURE_SIGMA_A = [5.0, 3.0, 1.0]
ORACLE_MIN_STEPS = 20_000
RUN_CONFIG_FILENAME = "run_config.json"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CALIBRATION = 3
EXIT_IO = 4
EXIT_VERIFICATION = 5


class VerificationFailedError(RuntimeError):
    """
    Raised when a moment report, a shape check or an invariant check fails.
    """

    pass


class RunConfig(BaseModel):
    """
    Fully-resolved configuration of one command.

    Attributes:
        command: Command name.
        params: Model parameters.
        sim: Simulation configuration (`simulate`).
        grid: Number of grid points (`curves`, `figures`, `verify`).
        out: Output directory.
        format: Format of tabular outputs.
        overwrite: Whether existing output files may be replaced.
        figure_sigma_a: Target volatilities of the figure scenarios.
        oracle_steps: RK4 steps of the oracle comparisons (`verify`).
        dump_paths: Number of raw paths to dump (`simulate`, 0 for none).
    """

    command: Literal["calibrate", "curves", "simulate", "figures", "verify"]
    params: ModelParams = Field(default_factory=ModelParams)
    sim: SimConfig = Field(default_factory=SimConfig)
    grid: int = Field(DEFAULT_GRID, ge=10)
    out: Path = DEFAULT_OUT
    format: OutputFormat = "csv"
    overwrite: bool = False
    figure_sigma_a: list[float] = Field(
        default_factory=lambda: list(DEFAULT_FIGURE_SIGMA_A)
    )
    oracle_steps: int = Field(100_000, ge=100)
    dump_paths: int = Field(0, ge=0)

    class Config:
        allow_mutation = False
        extra = "forbid"

    @validator("figure_sigma_a")
    def positive_sigma_a(cls, v):
        """
        Check that scenario volatilities are non-empty and positive.
        """
        if len(v) == 0:
            raise ValueError("figure_sigma_a must not be empty")
        if any(not (math.isfinite(s) and s > 0.0) for s in v):
            raise ValueError(
                f"figure_sigma_a values must be finite and positive ({v})"
            )
        return v


def _same_config(path: Path, config: RunConfig) -> bool:
    """
    Whether `path` already holds `config`, up to the `overwrite` flag.
    """
    if not path.is_file():
        return False
    try:
        existing = RunConfig.parse_file(path)
    except ValueError:
        return False
    return existing.copy(update=dict(overwrite=config.overwrite)) == config


def _echo_config(config: RunConfig) -> Path:
    out = prepare_output_dir(config.out, logger=logger)
    if _same_config(out / RUN_CONFIG_FILENAME, config):
        logger.info(f"{out / RUN_CONFIG_FILENAME} is up to date")
        return out
    write_json(
        config.dict(),
        out / RUN_CONFIG_FILENAME,
        overwrite=config.overwrite,
        logger=logger,
    )
    return out


def _print_table(frame: pd.DataFrame, format: OutputFormat) -> None:
    if format == "json":
        print(frame.to_json(orient="records", double_precision=15))
    else:
        print(frame.to_string(index=False))


def _refinement(n_intervals: int) -> int:
    return max(1, math.ceil(ORACLE_MIN_STEPS / n_intervals))


@validate_arguments
def cmd_calibrate(
    *,
    params: ModelParams = ModelParams(),
    out: Path = DEFAULT_OUT,
    format: OutputFormat = "csv",
    overwrite: bool = False,
) -> dict[str, Any]:
    """
    Calibrate `r0` and `I` and write them to `calibration.<format>`.

    Args:
        params: Model parameters.
        out: Output directory.
        format: Output format.
        overwrite: Whether existing output files may be replaced.

    Returns:
        `r0`, `I`, the residual, the iteration count and the final bracket.
    """
    config = RunConfig(
        command="calibrate",
        params=params,
        out=out,
        format=format,
        overwrite=overwrite,
    )
    out = _echo_config(config)
    result = calibrate_r0(params)
    summary = dict(
        r0=result.r0,
        I=I_from_r0(params, result.r0),
        residual=result.residual,
        iterations=result.iterations,
        bracket_lo=result.bracket[0],
        bracket_hi=result.bracket[1],
    )
    frame = pd.DataFrame([summary])
    write_table(
        frame,
        out / "calibration",
        overwrite=overwrite,
        format=format,
        logger=logger,
    )
    _print_table(frame, format)
    return summary


@validate_arguments
def cmd_curves(
    *,
    params: ModelParams = ModelParams(),
    grid: int = DEFAULT_GRID,
    out: Path = DEFAULT_OUT,
    format: OutputFormat = "csv",
    overwrite: bool = False,
) -> dict[str, Any]:
    """
    Write every coefficient curve on a uniform grid to `curves.<format>`.

    `Sigma3` is taken from the ODE oracle, integrated on a refinement of
    the output grid.
    """
    config = RunConfig(
        command="curves",
        params=params,
        grid=grid,
        out=out,
        format=format,
        overwrite=overwrite,
    )
    out = _echo_config(config)
    sol = build_solution(params)
    coefficient_grid = sample_grid(sol, grid)
    refinement = _refinement(grid - 1)
    sigma3_curve = integrate_sigma3(sol, refinement * (grid - 1))
    sigma3 = sigma3_curve.component("Sigma3")[::refinement]
    coefficient_grid = coefficient_grid.attach_column(
        "Sigma3", sigma3, after="Sigma2"
    )
    path = write_table(
        coefficient_grid.table,
        out / "curves",
        overwrite=overwrite,
        format=format,
        logger=logger,
    )
    return dict(r0=sol.r0, I=sol.I, n_rows=grid, path=path)


@validate_arguments
def cmd_simulate(
    *,
    params: ModelParams = ModelParams(),
    sim: SimConfig = SimConfig(),
    out: Path = DEFAULT_OUT,
    format: OutputFormat = "csv",
    overwrite: bool = False,
    dump_paths: int = 0,
) -> dict[str, Any]:
    """
    Simulate paths and write the moment report and autocorrelation tables.

    Outputs are `moments`, `autocorrelation`, `autocorrelation_trend` and,
    if `dump_paths > 0`, `paths`.

    Raises:
        VerificationFailedError: If a gated moment lies outside the
            3-standard-error band (after all outputs have been written).
    """
    config = RunConfig(
        command="simulate",
        params=params,
        sim=sim,
        out=out,
        format=format,
        overwrite=overwrite,
        dump_paths=dump_paths,
    )
    out = _echo_config(config)
    sol = build_solution(params)
    batch = run_batch(sol, sim)
    sigma3_curve = integrate_sigma3(
        sol, _refinement(sim.n_steps) * sim.n_steps
    )
    report = compare_moments(batch, sol, sigma3_curve)
    tables = {"moments": report.to_frame()}
    if sim.record_increments:
        autocorrelation = autocorrelation_table(batch, sol, sigma3_curve)
        tables["autocorrelation"] = autocorrelation.estimates
        tables["autocorrelation_trend"] = autocorrelation.trend
    if dump_paths > 0:
        tables["paths"] = dump_path_table(batch, max_paths=dump_paths)
    for name, frame in tables.items():
        write_table(
            frame,
            out / name,
            overwrite=overwrite,
            format=format,
            logger=logger,
        )
    _print_table(tables["moments"], format)
    if not report.passed:
        failing = [f"{row.moment}@{row.checkpoint}" for row in report.failing]
        msg = f"Moment checks failed: {failing}"
        logger.error(msg)
        raise VerificationFailedError(msg)
    return dict(r0=sol.r0, I=sol.I, passed=report.passed)


@validate_arguments
def cmd_figures(
    *,
    params: ModelParams = ModelParams(),
    figure_sigma_a: list[float] = DEFAULT_FIGURE_SIGMA_A,
    grid: int = DEFAULT_GRID,
    out: Path = DEFAULT_OUT,
    format: OutputFormat = "csv",
    overwrite: bool = False,
) -> dict[str, Any]:
    """
    Write the four panel series `fig1A` to `fig1D` and their shape checks.

    Raises:
        VerificationFailedError: If a shape check fails (after all outputs
            have been written).
    """
    config = RunConfig(
        command="figures",
        params=params,
        figure_sigma_a=figure_sigma_a,
        grid=grid,
        out=out,
        format=format,
        overwrite=overwrite,
    )
    out = _echo_config(config)
    series_list = figure_series(params, figure_sigma_a, grid)
    for series in series_list:
        write_table(
            series.to_frame(),
            out / f"fig{series.figure_id}",
            overwrite=overwrite,
            format=format,
            logger=logger,
        )
    checks = check_figure_shapes(series_list)
    write_table(
        checks,
        out / "figure_checks",
        overwrite=overwrite,
        format=format,
        logger=logger,
    )
    _print_table(checks, format)
    if not checks["passed"].all():
        msg = f"{int((~checks['passed']).sum())} figure shape checks failed"
        logger.error(msg)
        raise VerificationFailedError(msg)
    return dict(passed=True, figures=[s.figure_id for s in series_list])


@validate_arguments
def cmd_verify(
    *,
    params: ModelParams = ModelParams(),
    grid: int = DEFAULT_GRID,
    oracle_steps: int = 100_000,
    out: Path = DEFAULT_OUT,
    format: OutputFormat = "csv",
    overwrite: bool = False,
) -> dict[str, Any]:
    """
    Run the invariant suite and write the check matrix to `verify.<format>`.

    Raises:
        VerificationFailedError: If any check fails (after the matrix has
            been written).
    """
    config = RunConfig(
        command="verify",
        params=params,
        grid=grid,
        oracle_steps=oracle_steps,
        out=out,
        format=format,
        overwrite=overwrite,
    )
    out = _echo_config(config)
    sol = build_solution(params)
    matrix = run_invariant_suite(
        sol, grid_points=grid, oracle_steps=oracle_steps
    )
    write_table(
        matrix,
        out / "verify",
        overwrite=overwrite,
        format=format,
        logger=logger,
    )
    _print_table(matrix, format)
    if not matrix["passed"].all():
        failing = matrix.loc[~matrix["passed"], "check"].tolist()
        msg = f"Invariant checks failed: {failing}"
        logger.error(msg)
        raise VerificationFailedError(msg)
    return dict(r0=sol.r0, I=sol.I, passed=True, n_checks=len(matrix))


def run_command(config: RunConfig) -> dict[str, Any]:
    """
    Run the command described by a resolved configuration.
    """
    common = dict(
        params=config.params,
        out=config.out,
        format=config.format,
        overwrite=config.overwrite,
    )
    logger.info(f"START {config.command}")
    if config.command == "calibrate":
        result = cmd_calibrate(**common)
    elif config.command == "curves":
        result = cmd_curves(grid=config.grid, **common)
    elif config.command == "simulate":
        result = cmd_simulate(
            sim=config.sim, dump_paths=config.dump_paths, **common
        )
    elif config.command == "figures":
        result = cmd_figures(
            figure_sigma_a=config.figure_sigma_a, grid=config.grid, **common
        )
    else:
        result = cmd_verify(
            grid=config.grid, oracle_steps=config.oracle_steps, **common
        )
    logger.info(f"END {config.command}")
    return result


def _float_list(value: str) -> list[float]:
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise ArgumentTypeError(
            f"Expected comma-separated numbers, got {value!r}"
        )


def build_parser() -> ArgumentParser:
    """
    Argument parser with one sub-command per operation.
    """
    common = ArgumentParser(add_help=False)
    model = common.add_argument_group("model parameters")
    model.add_argument("--sigma-w", type=float, help="Noise-trader volatility")
    model.add_argument("--sigma-a", type=float, help="Target volatility")
    model.add_argument("--sigma-v", type=float, help="Dividend volatility")
    model.add_argument(
        "--rho", type=float, help="Correlation of target and dividend"
    )
    model.add_argument("--T", type=float, help="Trading horizon")
    sim = common.add_argument_group("simulation")
    sim.add_argument("--paths", type=int, help="Number of paths")
    sim.add_argument("--steps", type=int, help="Number of time steps")
    sim.add_argument("--seed", type=int, help="Root seed")
    sim.add_argument(
        "--checkpoints",
        type=_float_list,
        help="Comma-separated checkpoint times, e.g. 0.25,0.5,0.75",
    )
    sim.add_argument("--chunk-size", type=int, help="Paths per dask task")
    sim.add_argument(
        "--scheduler",
        choices=["synchronous", "threads", "processes"],
        help="Dask scheduler",
    )
    sim.add_argument(
        "--dump-paths", type=int, help="Number of raw paths to dump"
    )
    output = common.add_argument_group("output")
    output.add_argument("--grid", type=int, help="Number of grid points")
    output.add_argument("--oracle-steps", type=int, help="RK4 oracle steps")
    output.add_argument(
        "--figure-sigma-a",
        type=_float_list,
        help="Comma-separated target volatilities of the figure scenarios",
    )
    output.add_argument("--out", type=Path, help="Output directory")
    output.add_argument("--format", choices=["csv", "json"])
    output.add_argument(
        "--overwrite",
        action="store_true",
        default=None,
        help="Replace existing output files",
    )
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")

    parser = ArgumentParser(
        prog="kyle-constrained",
        description=(
            "Equilibrium of an insider trading toward a terminal target "
            "against noise traders and competitive market makers."
        ),
    )
    parser.add_argument(
        "-j", "--json", type=Path, help="Replay a run_config.json file"
    )
    subparsers = parser.add_subparsers(dest="command")
    for command, description in (
        ("calibrate", "Calibrate r0 and I"),
        ("curves", "Export the coefficient curves"),
        ("simulate", "Run the Monte Carlo moment checks"),
        ("figures", "Export the four panel series and check their shapes"),
        ("verify", "Run the invariant suite"),
    ):
        subparsers.add_parser(command, parents=[common], help=description)
    return parser


def config_from_args(args: Namespace) -> RunConfig:
    """
    Resolve command-line arguments into a `RunConfig`.
    """
    if args.json is not None:
        return RunConfig.parse_file(args.json)

    def _given(mapping: dict[str, str]) -> dict[str, Any]:
        return {
            key: getattr(args, name)
            for name, key in mapping.items()
            if getattr(args, name, None) is not None
        }

    params = ModelParams(
        **_given(
            dict(
                sigma_w="sigma_w",
                sigma_a="sigma_a",
                sigma_v="sigma_v",
                rho="rho",
                T="T",
            )
        )
    )
    sim = SimConfig(
        **_given(
            dict(
                paths="n_paths",
                steps="n_steps",
                seed="seed",
                checkpoints="checkpoint_times",
                chunk_size="chunk_size",
                scheduler="scheduler",
            )
        )
    )
    options = _given(
        dict(
            grid="grid",
            oracle_steps="oracle_steps",
            figure_sigma_a="figure_sigma_a",
            out="out",
            format="format",
            overwrite="overwrite",
            dump_paths="dump_paths",
        )
    )
    return RunConfig(command=args.command, params=params, sim=sim, **options)


def _replays_in_place(args: Namespace, config: RunConfig) -> bool:
    """
    Whether `--json` points at the echo inside the run's own output
    directory, whose outputs the replay regenerates byte for byte.
    """
    if args.json is None:
        return False
    echo = Path(config.out) / RUN_CONFIG_FILENAME
    return echo.exists() and echo.resolve() == Path(args.json).resolve()


def _set_verbosity(args: Namespace) -> None:
    package_logger = logging.getLogger("kyle_constrained")
    if getattr(args, "verbose", False):
        package_logger.setLevel(logging.DEBUG)
    elif getattr(args, "quiet", False):
        package_logger.setLevel(logging.WARNING)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the `kyle-constrained` command.

    Returns:
        The exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None and args.json is None:
            parser.error("a command (or --json) is required")
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    _set_verbosity(args)

    try:
        config = config_from_args(args)
        if _replays_in_place(args, config):
            logger.info(f"Replaying {args.json} in place")
            config = config.copy(update=dict(overwrite=True))
        run_command(config)
    except CalibrationError as e:
        logger.error(f"Calibration failed: {e}")
        return EXIT_CALIBRATION
    except (OverwriteNotAllowedError, OSError) as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO
    except (VerificationFailedError, BlowUpError, SimulationError) as e:
        logger.error(f"Verification failed: {e}")
        return EXIT_VERIFICATION
    except ValueError as e:
        # pydantic ValidationError and DomainError are ValueErrors
        logger.error(f"Invalid parameters: {e}")
        print(parser.format_usage(), file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
