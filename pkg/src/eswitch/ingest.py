"""CSV input and output for likelihood, return and reference files.

Line numbers in error messages count data rows, so the first row after the
header is line 1.
"""

from __future__ import annotations

import csv
import io
import math
from typing import Iterable, Sequence, TextIO

import numpy as np


class IngestError(ValueError):
    """Malformed or out-of-range input file."""


def _rows(handle: TextIO, path: str):
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError(f"{path}: empty file") from None
    return [h.strip() for h in header], reader


def _check_round(value: str, line: int, path: str) -> None:
    try:
        r = int(value)
    except ValueError:
        raise IngestError(f"{path}: line {line}: round {value!r} is not an integer") from None
    if r != line:
        raise IngestError(f"{path}: line {line}: expected round {line}, found {r}")


def read_matrix(handle: TextIO, mode: str = "predict", path: str = "<input>") -> np.ndarray:
    """Parse a ``round,e0,...,e{k-1}`` table.

    Predict mode requires likelihoods in (0, 1]; invest mode requires
    nonnegative returns with at least one positive entry per row.
    """
    if mode not in ("predict", "invest"):
        raise ValueError(f"unknown mode {mode!r}")
    header, reader = _rows(handle, path)
    k = len(header) - 1
    if k < 1 or header[0] != "round" or header[1:] != [f"e{j}" for j in range(k)]:
        raise IngestError(f"{path}: header must be round,e0,...,e{{k-1}}")
    out = []
    for line, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != k + 1:
            raise IngestError(f"{path}: line {line}: expected {k + 1} fields, found {len(row)}")
        _check_round(row[0], line, path)
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError:
            raise IngestError(f"{path}: line {line}: non-numeric entry") from None
        for v in vals:
            if not math.isfinite(v):
                raise IngestError(f"{path}: line {line}: non-finite entry")
            if mode == "predict" and not 0.0 < v <= 1.0:
                raise IngestError(f"{path}: line {line}: likelihood {v:g} outside (0, 1]")
            if mode == "invest" and v < 0:
                raise IngestError(f"{path}: line {line}: negative return {v:g}")
        if mode == "invest" and not any(v > 0 for v in vals):
            raise IngestError(f"{path}: line {line}: no positive return")
        out.append(vals)
    return np.asarray(out, dtype=float).reshape(len(out), k)


def ingest(path: str, mode: str = "predict") -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        return read_matrix(fh, mode, path)


def read_reference(handle: TextIO, path: str = "<reference>") -> list[int]:
    header, reader = _rows(handle, path)
    if header != ["round", "expert"]:
        raise IngestError(f"{path}: header must be round,expert")
    experts = []
    for line, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != 2:
            raise IngestError(f"{path}: line {line}: expected 2 fields, found {len(row)}")
        _check_round(row[0], line, path)
        try:
            e = int(row[1])
        except ValueError:
            raise IngestError(f"{path}: line {line}: expert {row[1]!r} is not an integer") from None
        if e < 0:
            raise IngestError(f"{path}: line {line}: negative expert index")
        experts.append(e)
    return experts


def load_reference(path: str) -> list[int]:
    with open(path, newline="", encoding="utf-8") as fh:
        return read_reference(fh, path)


def fmt(x) -> str:
    """Nine significant digits; infinities print as ``inf``."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".9g")
    return "" if x is None else str(x)


def table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def matrix_table(x: np.ndarray, exact: bool = False) -> str:
    """Likelihood CSV; ``exact`` writes shortest round-trip floats."""
    k = x.shape[1]
    rows = ([i + 1, *(repr(float(v)) if exact else float(v) for v in row)] for i, row in enumerate(x))
    return table(["round", *(f"e{j}" for j in range(k))], rows)


def reference_table(experts: Sequence[int]) -> str:
    return table(["round", "expert"], ([i + 1, int(e)] for i, e in enumerate(experts)))
