import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from devtools import debug

from kyle_constrained.tables import OverwriteNotAllowedError
from kyle_constrained.tables import prepare_output_dir
from kyle_constrained.tables import RunConfigEncoder
from kyle_constrained.tables import write_json
from kyle_constrained.tables import write_table


@pytest.fixture
def frame() -> pd.DataFrame:
    return pd.DataFrame(
        {"t": [0.0, 0.1], "value": [1.0 / 3.0, math.nan], "name": ["x", "y"]}
    )


def test_write_table_csv(tmp_path, frame):
    path = write_table(frame, tmp_path / "table", overwrite=False)
    assert path == tmp_path / "table.csv"
    text = path.read_text()
    debug(text)
    assert text.splitlines() == [
        "t,value,name",
        "0,0.33333333333333331,x",
        "0.10000000000000001,,y",
    ]
    # 17 significant digits round-trip exactly
    reloaded = pd.read_csv(path)
    assert reloaded["value"][0] == 1.0 / 3.0
    assert reloaded["t"][1] == 0.1


def test_write_table_json(tmp_path, frame):
    path = write_table(
        frame, tmp_path / "table.txt", overwrite=False, format="json"
    )
    assert path.name == "table.json"
    with path.open() as f:
        records = json.load(f)
    debug(records)
    assert records == [
        {"t": 0.0, "value": 1.0 / 3.0, "name": "x"},
        {"t": 0.1, "value": None, "name": "y"},
    ]
    assert path.read_text().endswith("\n")


def test_write_table_overwrite(tmp_path, frame):
    write_table(frame, tmp_path / "table", overwrite=False)
    with pytest.raises(OverwriteNotAllowedError) as e:
        write_table(frame, tmp_path / "table", overwrite=False)
    debug(e.value)
    assert "overwrite=True" in str(e.value)

    smaller = frame.iloc[:1]
    path = write_table(smaller, tmp_path / "table", overwrite=True)
    assert len(path.read_text().splitlines()) == 2


def test_write_json(tmp_path):
    data = dict(
        out=Path("/some/dir"),
        count=np.int64(3),
        flag=np.bool_(True),
        values=np.array([1.5, np.inf]),
        missing=math.nan,
    )
    path = write_json(data, tmp_path / "data.json", overwrite=False)
    with path.open() as f:
        loaded = json.load(f)
    debug(loaded)
    assert loaded == dict(
        out="/some/dir",
        count=3,
        flag=True,
        values=[1.5, None],
        missing=None,
    )
    first = path.read_bytes()
    write_json(data, path, overwrite=True)
    assert path.read_bytes() == first
    with pytest.raises(OverwriteNotAllowedError):
        write_json(data, path, overwrite=False)


def test_run_config_encoder():
    text = json.dumps(
        dict(out=Path("/some/dir"), seed=np.int32(7), rho=np.float32(0.5)),
        cls=RunConfigEncoder,
    )
    debug(text)
    assert json.loads(text) == dict(out="/some/dir", seed=7, rho=0.5)
    with pytest.raises(TypeError) as e:
        json.dumps(dict(x=object()), cls=RunConfigEncoder)
    debug(e.value)


def test_prepare_output_dir(tmp_path):
    nested = prepare_output_dir(tmp_path / "a" / "b")
    assert nested.is_dir()
    # Existing directories are accepted
    assert prepare_output_dir(str(nested)) == nested

    file_path = tmp_path / "file.txt"
    file_path.write_text("content")
    with pytest.raises(NotADirectoryError) as e:
        prepare_output_dir(file_path)
    debug(e.value)
