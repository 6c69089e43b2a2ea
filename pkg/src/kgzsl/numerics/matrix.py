"""Dense matrix helpers and the plain-text matrix formats.

Plain format::

    dims R C
    v11 v12 ... v1C
    ...

Concept-keyed format (node features, targets, embedding tables) uses the same
header, each row prefixed by ``name<TAB>``.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from ..errors import DataError, NonFiniteInput, ShapeMismatch


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got shape {m.shape}")
    if (rows is not None and m.shape[0] != rows) or (cols is not None and m.shape[1] != cols):
        raise ShapeMismatch(f"expected {rows}x{cols}, got {m.shape[0]}x{m.shape[1]}")
    if not np.isfinite(m).all():
        raise NonFiniteInput("matrix has non-finite entries")
    return m


def _fmt(x: float) -> str:
    return repr(float(x))


def format_matrix(m: np.ndarray) -> str:
    m = as_matrix(m)
    lines = [f"dims {m.shape[0]} {m.shape[1]}"]
    lines += [" ".join(_fmt(v) for v in row) for row in m]
    return "\n".join(lines) + "\n"


def _parse_header(line: str) -> tuple[int, int]:
    parts = line.split()
    if len(parts) != 3 or parts[0] != "dims":
        raise DataError(f"bad matrix header {line!r}")
    return int(parts[1]), int(parts[2])


def parse_matrix(lines: Iterable[str]) -> np.ndarray:
    it = (ln for ln in lines if ln.strip() and not ln.startswith("#"))
    rows, cols = _parse_header(next(it, "") or "")
    data = [[float(v) for v in ln.split()] for ln in it]
    if len(data) != rows or any(len(r) != cols for r in data):
        raise DataError(f"matrix body does not match dims {rows} {cols}")
    return as_matrix(np.array(data, dtype=np.float64).reshape(rows, cols))


def format_keyed(names: Iterable[str], m: np.ndarray) -> str:
    names = list(names)
    m = as_matrix(m, rows=len(names))
    lines = [f"dims {m.shape[0]} {m.shape[1]}"]
    lines += [name + "\t" + " ".join(_fmt(v) for v in row) for name, row in zip(names, m)]
    return "\n".join(lines) + "\n"


def parse_keyed(lines: Iterable[str]) -> tuple[list[str], np.ndarray]:
    from ..kg_ingest import normalize_concept

    it = (ln.rstrip("\r\n") for ln in lines if ln.strip() and not ln.startswith("#"))
    rows, cols = _parse_header(next(it, "") or "")
    names, data = [], []
    for ln in it:
        name, _, body = ln.partition("\t")
        vals = [float(v) for v in body.split()]
        if len(vals) != cols:
            raise DataError(f"row {name!r} has {len(vals)} values, expected {cols}")
        names.append(normalize_concept(name))
        data.append(vals)
    if len(names) != rows:
        raise DataError(f"expected {rows} rows, found {len(names)}")
    if len(set(names)) != len(names):
        raise DataError("duplicate concept rows")
    return names, as_matrix(np.array(data, dtype=np.float64).reshape(rows, cols))


def load_keyed(path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        names, m = parse_keyed(fh)
    return dict(zip(names, m))


def save_keyed(path, table: Mapping[str, np.ndarray]) -> None:
    names = list(table)
    m = np.vstack([table[n] for n in names]) if names else np.zeros((0, 0))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_keyed(names, m))


def row_normalize(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize rows; all-zero rows are left unchanged and flagged."""
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    zero = norms[:, 0] == 0
    return m / np.where(norms == 0, 1.0, norms), zero
