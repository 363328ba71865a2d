"""Plain-text persistence: full-precision CSV matrices and sorted JSON."""

import json
from pathlib import Path

import numpy as np


def _fmt(x) -> str:
    return repr(float(x))


def write_matrix(path, m):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    lines = [",".join(_fmt(x) for x in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def write_grid(path, row_axis, col_axis, m, corner=""):
    """Matrix with the column axis as the first row and the row axis as the first column."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    lines = [",".join([corner] + [_fmt(c) for c in col_axis])]
    for r, row in zip(row_axis, m):
        lines.append(",".join([_fmt(r)] + [_fmt(x) for x in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid(path):
    rows = [line.split(",") for line in Path(path).read_text().splitlines()]
    col_axis = np.array([float(x) for x in rows[0][1:]])
    row_axis = np.array([float(r[0]) for r in rows[1:]])
    m = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return row_axis, col_axis, m


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
