# Copyright 2024 (C) The kyle-constrained authors
#
# This file is part of kyle-constrained, distributed under the BSD-3-Clause
# license.
"""
Writers for tabular and structured outputs, with explicit overwrite
semantics.

CSV files carry floats with 17 significant digits and empty cells for
missing values; JSON files use the shortest round-trip representation of
floats and `null` for missing values. Both are byte-identical across runs
with identical inputs.
"""
import json
import logging
import math
from json import JSONEncoder
from pathlib import Path
from typing import Any
from typing import Literal
from typing import Optional
from typing import Union

import numpy as np
import pandas as pd


CSV_FLOAT_FORMAT = "%.17g"

OutputFormat = Literal["csv", "json"]


class OverwriteNotAllowedError(RuntimeError):
    pass


class RunConfigEncoder(JSONEncoder):
    """
    JSONEncoder for paths and numpy values.
    """

    def default(self, value):
        if isinstance(value, Path):
            return value.as_posix()
        if isinstance(value, np.bool_):
            return bool(value)
        if isinstance(value, np.integer):
            return int(value)
        if isinstance(value, np.floating):
            return float(value)
        if isinstance(value, np.ndarray):
            return value.tolist()
        return JSONEncoder.default(self, value)


def prepare_output_dir(
    path: Union[str, Path],
    *,
    logger: Optional[logging.Logger] = None,
) -> Path:
    """
    Create the output directory (and its parents) if needed.

    Args:
        path: Output directory.
        logger: The logger to use (if unset, use `logging.getLogger(None)`).

    Returns:
        The directory as a `Path`.
    """
    if logger is None:
        logger = logging.getLogger(None)
    path = Path(path)
    if path.exists() and not path.is_dir():
        error_msg = f"Output path {path} exists and is not a directory."
        logger.error(error_msg)
        raise NotADirectoryError(error_msg)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _check_target(
    path: Path, *, overwrite: bool, logger: logging.Logger
) -> None:
    if path.exists():
        if not overwrite:
            error_msg = (
                f"Cannot write {path} with `{overwrite=}`, since it already "
                "exists.\nHint: try setting `overwrite=True`."
            )
            logger.error(error_msg)
            raise OverwriteNotAllowedError(error_msg)
        logger.info(f"Overwriting existing file {path}")


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    return value


def write_json(
    data: Any,
    path: Union[str, Path],
    *,
    overwrite: bool,
    logger: Optional[logging.Logger] = None,
) -> Path:
    """
    Write a JSON document, with non-finite floats replaced by `null`.

    Raises:
        OverwriteNotAllowedError:
            If `overwrite=False` and the file already exists.
    """
    if logger is None:
        logger = logging.getLogger(None)
    path = Path(path)
    _check_target(path, overwrite=overwrite, logger=logger)
    # Round-trip through the encoder so that numpy values become builtins
    plain = json.loads(json.dumps(data, cls=RunConfigEncoder))
    with path.open("w") as f:
        json.dump(_json_safe(plain), f, indent=2, allow_nan=False)
        f.write("\n")
    logger.info(f"Written {path}")
    return path


def write_table(
    frame: pd.DataFrame,
    path: Union[str, Path],
    *,
    overwrite: bool,
    format: OutputFormat = "csv",
    logger: Optional[logging.Logger] = None,
) -> Path:
    """
    Write a table as CSV or as a JSON list of records.

    Args:
        frame: Table to write; its column order is preserved.
        path: Target path; its suffix is replaced by `.csv` or `.json`.
        overwrite: Whether an existing file may be replaced.
        format: Output format.
        logger: The logger to use (if unset, use `logging.getLogger(None)`).

    Returns:
        The path of the written file.

    Raises:
        OverwriteNotAllowedError:
            If `overwrite=False` and the file already exists.
    """
    if logger is None:
        logger = logging.getLogger(None)
    path = Path(path).with_suffix(f".{format}")
    if format == "json":
        records = [
            dict(zip(frame.columns, row))
            for row in frame.itertuples(index=False, name=None)
        ]
        return write_json(records, path, overwrite=overwrite, logger=logger)
    _check_target(path, overwrite=overwrite, logger=logger)
    frame.to_csv(
        path,
        index=False,
        float_format=CSV_FLOAT_FORMAT,
        na_rep="",
    )
    logger.info(f"Written {path}")
    return path
