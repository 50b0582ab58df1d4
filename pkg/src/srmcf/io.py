"""File formats: field snapshots, tidy CSV tables and JSON summaries.

Snapshot layout::

    format=1
    group=heisenberg
    n=3
    shape=41,41,41
    lo=0,0,0
    hi=1,1,1
    epsilon=0.25
    time=0.1
    dtype=<f8
    end_header
    <raw little-endian float64 values, row-major>

All writes go through a temporary file in the target directory followed by an
atomic rename.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import Grid

__all__ = [
    "SnapshotFile",
    "write_snapshot",
    "read_snapshot",
    "write_csv",
    "read_csv",
    "write_json",
    "format_float",
    "atomic_write",
]

SNAPSHOT_FORMAT = 1
_END = "end_header"


def atomic_write(path, data: bytes) -> Path:
    """Write ``data`` to ``path`` via temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def format_float(x) -> str:
    """17 significant digits, ``.`` decimal; integers stay integers."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _csv_cell(x) -> str:
    s = format_float(x)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    lines = [",".join(_csv_cell(h) for h in header)]
    width = len(header)
    for row in rows:
        row = list(row)
        if len(row) != width:
            raise ValueError(f"row has {len(row)} cells, header has {width}")
        lines.append(",".join(_csv_cell(v) for v in row))
    return atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_csv(path):
    """Return ``(header, rows)`` with numeric cells parsed as floats where possible."""
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for row in reader:
            parsed = []
            for cell in row:
                try:
                    parsed.append(float(cell))
                except ValueError:
                    parsed.append(cell)
            rows.append(parsed)
    return header, rows


def write_json(path, payload) -> Path:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
    return atomic_write(path, (text + "\n").encode("utf-8"))


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


@dataclass
class SnapshotFile:
    group: str
    grid: Grid
    epsilon: float
    time: float
    values: np.ndarray


def _join(vals) -> str:
    return ",".join(format_float(v) for v in vals)


def write_snapshot(path, values: np.ndarray, grid: Grid, group: str, epsilon: float, time: float) -> Path:
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    header = [
        f"format={SNAPSHOT_FORMAT}",
        f"group={group}",
        f"n={grid.ndim}",
        f"shape={_join(grid.shape)}",
        f"lo={_join(grid.lo)}",
        f"hi={_join(grid.hi)}",
        f"epsilon={format_float(epsilon)}",
        f"time={format_float(time)}",
        f"periodic={_join(int(p) for p in grid.periodic)}",
        "dtype=<f8",
        _END,
    ]
    body = np.ascontiguousarray(values, dtype="<f8").tobytes(order="C")
    return atomic_write(path, ("\n".join(header) + "\n").encode("ascii") + body)


def read_snapshot(path) -> SnapshotFile:
    raw = Path(path).read_bytes()
    meta = {}
    pos = 0
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise ValueError(f"{path}: header not terminated")
        line = raw[pos:nl].decode("ascii").strip()
        pos = nl + 1
        if line == _END:
            break
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: malformed header line {line!r}")
        meta[key] = val
    if meta.get("format") != str(SNAPSHOT_FORMAT):
        raise ValueError(f"{path}: unsupported snapshot format {meta.get('format')!r}")
    for key in ("group", "n", "shape", "lo", "hi", "epsilon", "time"):
        if key not in meta:
            raise ValueError(f"{path}: header lacks {key!r}")
    shape = tuple(int(v) for v in meta["shape"].split(","))
    lo = tuple(float(v) for v in meta["lo"].split(","))
    hi = tuple(float(v) for v in meta["hi"].split(","))
    periodic = tuple(bool(int(v)) for v in meta["periodic"].split(",")) if "periodic" in meta else ()
    if int(meta["n"]) != len(shape):
        raise ValueError(f"{path}: n does not match shape")
    grid = Grid(lo, hi, shape, periodic)
    count = int(np.prod(shape))
    body = raw[pos:]
    if len(body) != 8 * count:
        raise ValueError(f"{path}: expected {8 * count} data bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f8").reshape(shape).astype(float)
    return SnapshotFile(meta["group"], grid, float(meta["epsilon"]), float(meta["time"]), values)
