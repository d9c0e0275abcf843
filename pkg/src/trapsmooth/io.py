"""Atomic artifact writers: JSON reports, CSV tables, flat binary snapshots."""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "atomic_write_bytes",
    "write_json",
    "write_csv",
    "to_jsonable",
    "SNAPSHOT_MAGIC",
    "pack_snapshot",
    "unpack_snapshot",
]

SNAPSHOT_MAGIC = b"GFLD"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIQQddddd")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode("utf-8"))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return v


def csv_bytes(header, rows) -> bytes:
    buf = _io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue().encode("utf-8")


def write_csv(path, header, rows) -> None:
    atomic_write_bytes(path, csv_bytes(header, rows))


def pack_snapshot(values: np.ndarray, dx: float, dy: float, x0: float, y0: float, t: float) -> bytes:
    """Header (magic, version, nx, ny, dx, dy, x0, y0, t) then interleaved re/im, little-endian."""
    values = np.asarray(values, dtype=np.complex128)
    nx, ny = values.shape
    head = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, nx, ny, dx, dy, x0, y0, t)
    return head + values.astype("<c16").tobytes(order="C")


def unpack_snapshot(data: bytes):
    magic, version, nx, ny, dx, dy, x0, y0, t = _HEADER.unpack_from(data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError("not a field snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    payload = np.frombuffer(data, dtype="<c16", offset=_HEADER.size)
    if payload.size != nx * ny:
        raise ValueError("snapshot payload size does not match header")
    return payload.reshape(nx, ny).astype(np.complex128), dict(dx=dx, dy=dy, x0=x0, y0=y0, t=t)
