"""CSV exchange helpers.

All numeric tables written by this package share one format: a single
header row naming the columns, one record per line, values printed with
"%.17g" so that round-trips through text are bit-exact for doubles.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ParseError, ShapeError

FLOAT_FMT = "%.17g"


def write_csv(path, header, array) -> None:
    """Write a 2-D array as CSV with a header row, full double precision."""
    array = np.atleast_2d(np.asarray(array, dtype=float))
    if len(header) != array.shape[1]:
        raise ShapeError(
            f"header has {len(header)} names but array has {array.shape[1]} columns"
        )
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in array:
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def read_csv(path, expected_cols=None):
    """Read a CSV written by :func:`write_csv`.

    Returns ``(header, array)``.  Malformed rows raise :class:`ParseError`
    carrying the 1-based line number.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    header = [h.strip() for h in lines[0].split(",")]
    ncols = len(header)
    if expected_cols is not None and ncols != expected_cols:
        raise ParseError(
            f"expected {expected_cols} columns, header has {ncols}", line=1
        )
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != ncols:
            raise ParseError(
                f"expected {ncols} fields, found {len(parts)}", line=lineno
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    if not rows:
        raise ParseError("no data rows", line=2)
    return header, np.asarray(rows, dtype=float)
