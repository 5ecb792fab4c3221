"""On-disk formats.

TRDS (datasets)
    ``b"TRDS"``, version byte ``0x01``, little-endian ``u32`` m1, m2, count,
    then ``count`` records of one f64 ``y`` followed by ``m1*m2`` f64 entries
    of ``X`` in row-major order.

TRMX (matrices)
    ``b"TRMX"``, version byte ``0x01``, ``u32`` rows, cols, then rows*cols
    f64 little-endian row-major.

CSV datasets carry the header ``y,x_0_0,...,x_{m1-1}_{m2-1}``.
Summaries are JSON documents.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from lowrank_ci.errors import FormatError
from lowrank_ci.model import Dataset

DATASET_MAGIC = b"TRDS"
MATRIX_MAGIC = b"TRMX"
VERSION = 1
_HEADER = struct.Struct("<4sBIII")
_MX_HEADER = struct.Struct("<4sBII")


def dataset_to_bytes(d: Dataset) -> bytes:
    total = d.x.shape[0]
    m1, m2 = d.shape
    rec = np.empty((total, 1 + m1 * m2), dtype="<f8")
    rec[:, 0] = d.y
    rec[:, 1:] = d.x.reshape(total, -1)
    return _HEADER.pack(DATASET_MAGIC, VERSION, m1, m2, total) + rec.tobytes()


def dataset_from_bytes(buf: bytes) -> Dataset:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header ({len(buf)} of {_HEADER.size} bytes)", offset=len(buf))
    magic, version, m1, m2, total = _HEADER.unpack_from(buf, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if m1 < 1 or m2 < 1:
        raise FormatError(f"invalid dimensions {m1}x{m2}", offset=5)
    if total < 2 or total % 2:
        raise FormatError(f"record count {total} is not a positive even number", offset=13)
    width = 8 * (1 + m1 * m2)
    need = _HEADER.size + total * width
    if len(buf) < need:
        complete = (len(buf) - _HEADER.size) // width
        raise FormatError(
            f"truncated payload: {complete} of {total} records complete",
            offset=_HEADER.size + complete * width,
        )
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after last record", offset=need)
    rec = np.frombuffer(buf, dtype="<f8", count=total * (1 + m1 * m2), offset=_HEADER.size)
    rec = rec.reshape(total, 1 + m1 * m2).astype(np.float64)
    bad = ~np.isfinite(rec)
    if bad.any():
        row = int(np.argmax(bad.any(axis=1)))
        raise FormatError(f"non-finite value in record {row}", offset=_HEADER.size + row * width)
    return Dataset(np.ascontiguousarray(rec[:, 1:]).reshape(total, m1, m2), rec[:, 0].copy())


def write_dataset(d: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(d))


def read_dataset(path) -> Dataset:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_dataset_csv(path)
    return dataset_from_bytes(path.read_bytes())


def csv_header(m1: int, m2: int) -> list[str]:
    return ["y"] + [f"x_{i}_{j}" for i in range(m1) for j in range(m2)]


def write_dataset_csv(d: Dataset, path) -> None:
    m1, m2 = d.shape
    flat = d.x.reshape(d.x.shape[0], -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(m1, m2))
        for yi, xi in zip(d.y, flat):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("empty CSV file", offset=0)
    header = rows[0]
    if not header or header[0] != "y":
        raise FormatError("first header column must be 'y'", offset=0)
    try:
        last = header[-1].split("_")
        m1, m2 = int(last[1]) + 1, int(last[2]) + 1
    except (IndexError, ValueError):
        raise FormatError(f"cannot parse dimensions from header column {header[-1]!r}", offset=0)
    if header != csv_header(m1, m2):
        raise FormatError("header columns are not y,x_0_0,...,x_{m1-1}_{m2-1}", offset=0)
    body = rows[1:]
    data = np.empty((len(body), 1 + m1 * m2))
    for line, row in enumerate(body, start=1):
        if len(row) != 1 + m1 * m2:
            raise FormatError(f"expected {1 + m1 * m2} fields, got {len(row)}", offset=line)
        try:
            data[line - 1] = [float(v) for v in row]
        except ValueError as exc:
            raise FormatError(str(exc), offset=line)
    if len(body) < 2 or len(body) % 2:
        raise FormatError(f"record count {len(body)} is not a positive even number", offset=len(rows))
    return Dataset(data[:, 1:].reshape(-1, m1, m2), data[:, 0])


def matrix_to_bytes(a) -> bytes:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    return _MX_HEADER.pack(MATRIX_MAGIC, VERSION, *a.shape) + a.astype("<f8").tobytes()


def matrix_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _MX_HEADER.size:
        raise FormatError("truncated matrix header", offset=len(buf))
    magic, version, rows, cols = _MX_HEADER.unpack_from(buf, 0)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MATRIX_MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    need = _MX_HEADER.size + 8 * rows * cols
    if len(buf) != need:
        raise FormatError(f"payload is {len(buf)} bytes, expected {need}", offset=min(len(buf), need))
    return np.frombuffer(buf, dtype="<f8", offset=_MX_HEADER.size).reshape(rows, cols).astype(np.float64)


def write_matrix(a, path) -> None:
    Path(path).write_bytes(matrix_to_bytes(a))


def read_matrix(path) -> np.ndarray:
    return matrix_from_bytes(Path(path).read_bytes())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
