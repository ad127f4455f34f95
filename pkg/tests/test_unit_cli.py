import json

import jsonschema
import pandas as pd
import pytest
from devtools import debug

from .conftest import TAU_ONE
from kyle_constrained.calibrate import GRID_COLUMNS
from kyle_constrained.cli import build_parser
from kyle_constrained.cli import cmd_calibrate
from kyle_constrained.cli import cmd_curves
from kyle_constrained.cli import config_from_args
from kyle_constrained.cli import EXIT_CALIBRATION
from kyle_constrained.cli import EXIT_IO
from kyle_constrained.cli import EXIT_OK
from kyle_constrained.cli import EXIT_USAGE
from kyle_constrained.cli import EXIT_VERIFICATION
from kyle_constrained.cli import main
from kyle_constrained.cli import RUN_CONFIG_FILENAME
from kyle_constrained.cli import RunConfig


def test_config_from_args(tmp_path):
    parser = build_parser()
    args = parser.parse_args(
        [
            "simulate",
            "--sigma-a",
            "2",
            "--paths",
            "500",
            "--checkpoints",
            "0.1,0.2",
            "--scheduler",
            "synchronous",
            "--out",
            str(tmp_path),
            "--overwrite",
        ]
    )
    config = config_from_args(args)
    debug(config)
    assert config.command == "simulate"
    assert config.params.sigma_a == 2.0
    assert config.params.sigma_w == 1.0
    assert config.sim.n_paths == 500
    assert config.sim.n_steps == 2000
    assert config.sim.checkpoint_times == [0.1, 0.2]
    assert config.sim.scheduler == "synchronous"
    assert config.out == tmp_path
    assert config.overwrite

    defaults = config_from_args(parser.parse_args(["verify"]))
    assert defaults.overwrite is False
    assert defaults.grid == 1001
    assert defaults.format == "csv"


def test_run_config_schema():
    schema = RunConfig.schema()
    debug(schema["properties"].keys())
    jsonschema.Draft7Validator.check_schema(schema)
    assert schema["properties"]["command"]["enum"] == [
        "calibrate",
        "curves",
        "simulate",
        "figures",
        "verify",
    ]


def test_calibrate(tmp_path, capsys):
    out = tmp_path / "calibrate"
    code = main(["calibrate", "--T", repr(TAU_ONE), "--out", str(out)])
    assert code == EXIT_OK
    frame = pd.read_csv(out / "calibration.csv")
    debug(frame)
    assert frame["r0"][0] == pytest.approx(1.0, rel=1e-10)
    assert frame["I"][0] == pytest.approx(0.1125, rel=1e-10)
    assert frame["residual"][0] <= 1e-12
    assert "r0" in capsys.readouterr().out

    with (out / RUN_CONFIG_FILENAME).open() as f:
        echoed = json.load(f)
    debug(echoed)
    assert echoed["command"] == "calibrate"
    assert echoed["params"]["T"] == TAU_ONE
    assert echoed["out"] == out.as_posix()

    # Outputs are protected unless --overwrite is given
    code = main(["calibrate", "--T", repr(TAU_ONE), "--out", str(out)])
    assert code == EXIT_IO
    code = main(
        ["calibrate", "--T", repr(TAU_ONE), "--out", str(out), "--overwrite"]
    )
    assert code == EXIT_OK


def test_json_replay(tmp_path):
    """
    GIVEN the configuration echoed by a first run
    WHEN it is replayed through --json into another directory
    THEN the outputs are byte-identical
    """
    first = tmp_path / "first"
    assert main(["calibrate", "--rho", "0.7", "--out", str(first)]) == 0
    with (first / RUN_CONFIG_FILENAME).open() as f:
        config = json.load(f)
    second = tmp_path / "second"
    config["out"] = str(second)
    config_path = tmp_path / "replay.json"
    with config_path.open("w") as f:
        json.dump(config, f)

    assert main(["--json", str(config_path)]) == EXIT_OK
    assert (second / "calibration.csv").read_bytes() == (
        first / "calibration.csv"
    ).read_bytes()


def test_json_replay_in_place(tmp_path):
    """
    GIVEN a finished run
    WHEN its echoed configuration is replayed from the output directory
    THEN the run succeeds and leaves every file byte-identical
    """
    out = tmp_path / "run"
    assert main(["calibrate", "--out", str(out)]) == EXIT_OK
    echo = out / RUN_CONFIG_FILENAME
    before = {path.name: path.read_bytes() for path in sorted(out.iterdir())}
    debug(list(before))

    assert main(["--json", str(echo)]) == EXIT_OK
    after = {path.name: path.read_bytes() for path in sorted(out.iterdir())}
    assert after == before
    with echo.open() as f:
        assert json.load(f)["overwrite"] is False

    # A fresh run with the same arguments is still protected
    assert main(["calibrate", "--out", str(out)]) == EXIT_IO


def test_cmd_calibrate(tmp_path):
    out = tmp_path / "calibrate"
    summary = cmd_calibrate(params=dict(T=TAU_ONE), out=str(out))
    debug(summary)
    assert summary["r0"] == pytest.approx(1.0, rel=1e-10)
    assert (out / "calibration.csv").exists()
    assert (out / RUN_CONFIG_FILENAME).exists()


def test_cmd_curves_invalid_arguments(tmp_path):
    with pytest.raises(ValueError) as e:
        cmd_curves(params=dict(T=-1.0), out=str(tmp_path))
    debug(e.value)
    with pytest.raises(ValueError):
        cmd_curves(grid=5, out=str(tmp_path))


def test_cmd_curves_summary(tmp_path):
    summary = cmd_curves(params=dict(T=TAU_ONE), grid=11, out=str(tmp_path))
    debug(summary)
    assert summary["path"] == tmp_path / "curves.csv"
    assert summary["n_rows"] == 11


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["calibrate", "--T", "-1"],
        ["calibrate", "--rho", "0"],
        ["calibrate", "--paths"],
        ["unknown"],
        ["simulate", "--paths", "0"],
        ["figures", "--figure-sigma-a", "1,a"],
        ["calibrate", "--verbose", "--quiet"],
    ],
)
def test_usage_errors(tmp_path, argv):
    code = main(argv + (["--out", str(tmp_path)] if argv else []))
    debug(argv, code)
    assert code == EXIT_USAGE


def test_calibration_failure(tmp_path):
    code = main(
        [
            "calibrate",
            "--sigma-w",
            "1e-200",
            "--sigma-a",
            "1e200",
            "--out",
            str(tmp_path),
        ]
    )
    assert code == EXIT_CALIBRATION


def test_output_path_is_a_file(tmp_path):
    target = tmp_path / "file"
    target.write_text("content")
    assert main(["calibrate", "--out", str(target)]) == EXIT_IO


def test_curves(tmp_path):
    out = tmp_path / "curves"
    code = main(["curves", "--grid", "101", "--out", str(out)])
    assert code == EXIT_OK
    text = (out / "curves.csv").read_text().splitlines()
    expected_header = list(GRID_COLUMNS)
    expected_header.insert(expected_header.index("Sigma2") + 1, "Sigma3")
    assert text[0].split(",") == expected_header
    assert len(text) == 102

    frame = pd.read_csv(out / "curves.csv")
    debug(frame.tail())
    assert pd.isna(frame["beta"].iloc[-1])
    assert frame["beta"].iloc[:-1].notna().all()
    assert frame["Sigma3"].iloc[0] == 0.0
    assert (frame["Sigma3"].iloc[1:] > 0.0).all()


def test_curves_json(tmp_path):
    out = tmp_path / "curves"
    code = main(
        ["curves", "--grid", "11", "--format", "json", "--out", str(out)]
    )
    assert code == EXIT_OK
    with (out / "curves.json").open() as f:
        records = json.load(f)
    assert len(records) == 11
    assert records[-1]["beta"] is None


def test_simulate_is_reproducible(tmp_path):
    """
    GIVEN two runs of the same simulation into different directories
    WHEN their outputs are compared
    THEN every table is byte-identical
    """
    codes = []
    for name in ["a", "b"]:
        codes.append(
            main(
                [
                    "simulate",
                    "--paths",
                    "200",
                    "--steps",
                    "100",
                    "--chunk-size",
                    "64",
                    "--dump-paths",
                    "3",
                    "--out",
                    str(tmp_path / name),
                ]
            )
        )
    debug(codes)
    assert codes[0] == codes[1]
    assert codes[0] in (EXIT_OK, EXIT_VERIFICATION)
    for table in [
        "moments.csv",
        "autocorrelation.csv",
        "autocorrelation_trend.csv",
        "paths.csv",
    ]:
        first = (tmp_path / "a" / table).read_bytes()
        assert first == (tmp_path / "b" / table).read_bytes()

    moments = pd.read_csv(tmp_path / "a" / "moments.csv")
    assert set(moments["moment"]) >= {"sigma1", "sigma4", "block_fraction"}
    paths = pd.read_csv(tmp_path / "a" / "paths.csv")
    assert len(paths) == 3 * 3


def test_figures(tmp_path):
    out = tmp_path / "figures"
    code = main(["figures", "--grid", "101", "--out", str(out)])
    assert code == EXIT_OK
    for figure_id in ["1A", "1B", "1C", "1D"]:
        frame = pd.read_csv(out / f"fig{figure_id}.csv")
        assert list(frame.columns) == [
            "t",
            "sigma_a=5",
            "sigma_a=3",
            "sigma_a=1",
        ]
        assert len(frame) == 101
    remaining = pd.read_csv(out / "fig1D.csv")
    for column in ["sigma_a=5", "sigma_a=3", "sigma_a=1"]:
        assert remaining[column][0] == pytest.approx(0.09, rel=1e-12)
    checks = pd.read_csv(out / "figure_checks.csv")
    debug(checks)
    assert checks["passed"].all()


def test_verify(tmp_path):
    out = tmp_path / "verify"
    code = main(
        [
            "verify",
            "--grid",
            "201",
            "--oracle-steps",
            "20000",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK
    matrix = pd.read_csv(out / "verify.csv")
    debug(matrix)
    assert list(matrix.columns) == [
        "check",
        "value",
        "bound",
        "tolerance",
        "passed",
    ]
    assert matrix["passed"].all()
