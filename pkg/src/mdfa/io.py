"""Reading and writing data matrices.

Two formats are accepted: RFC-4180 CSV (optionally with a header row) and a
JSON object ``{"rows": n, "cols": p, "data": [row-major values]}``.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInput


def read_csv_matrix(path, header=False):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if header:
        rows = rows[1:]
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise InvalidInput(f"{path}: no data rows")
    width = len(rows[0])
    try:
        data = [[float(cell) for cell in r] for r in rows]
    except ValueError as exc:
        raise InvalidInput(f"{path}: non-numeric cell ({exc})") from None
    if any(len(r) != width for r in data):
        raise InvalidInput(f"{path}: ragged rows")
    return _checked(np.array(data), path)


def read_json_matrix(path):
    try:
        obj = json.loads(Path(path).read_text())
        n, p, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InvalidInput(f"{path}: not a matrix document ({exc})") from None
    if len(data) != n * p:
        raise InvalidInput(f"{path}: expected {n * p} values, found {len(data)}")
    try:
        X = np.array(data, dtype=float).reshape(n, p)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"{path}: {exc}") from None
    return _checked(X, path)


def read_matrix(path, fmt=None, header=False):
    """Dispatch on ``fmt`` (``"csv"``/``"json"``) or on the file extension."""
    fmt = fmt or Path(path).suffix.lower().lstrip(".")
    if fmt == "csv":
        return read_csv_matrix(path, header=header)
    if fmt == "json":
        return read_json_matrix(path)
    raise InvalidInput(f"cannot infer format of {path}; use .csv or .json")


def matrix_to_json(X):
    X = np.asarray(X, dtype=float)
    return {"rows": X.shape[0], "cols": X.shape[1], "data": X.ravel().tolist()}


def _checked(X, path):
    if not np.all(np.isfinite(X)):
        raise InvalidInput(f"{path}: non-finite values")
    return X
