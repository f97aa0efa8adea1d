"""File formats: FBM2 binary field dumps and plain CSV tables.

FBM2 layout (little-endian)::

    magic  b"FBM2"
    u32    version (=1)
    f64    h1, h2, T, L
    u32    n_t, n_x
    u64    seed
    f64    (n_t+1)*(n_x+1) values, time-major
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .fractional_noise import FieldSample, HurstPair
from .grid import GridSpec

MAGIC = b"FBM2"
VERSION = 1
_HEADER = struct.Struct("<4sIddddIIQ")


def field_to_bytes(f: FieldSample) -> bytes:
    g = f.grid
    header = _HEADER.pack(MAGIC, VERSION, f.hurst.h1, f.hurst.h2, g.T, g.L, g.n_t, g.n_x, f.seed)
    return header + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def field_from_bytes(buf: bytes) -> FieldSample:
    if len(buf) < _HEADER.size:
        raise ValueError("truncated FBM2 header")
    magic, version, h1, h2, T, L, n_t, n_x, seed = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported FBM2 version {version}")
    grid = GridSpec(T, L, n_t, n_x)
    n = (n_t + 1) * (n_x + 1)
    body = buf[_HEADER.size :]
    if len(body) != 8 * n:
        raise ValueError(f"expected {8 * n} bytes of values, found {len(body)}")
    values = np.frombuffer(body, dtype="<f8").reshape(grid.shape).astype(float)
    return FieldSample(values, HurstPair.relaxed(h1, h2), grid, seed)


def write_field_binary(path, f: FieldSample) -> None:
    Path(path).write_bytes(field_to_bytes(f))


def read_field_binary(path) -> FieldSample:
    return field_from_bytes(Path(path).read_bytes())


def write_table(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_field_csv(path, f: FieldSample) -> None:
    t, x = f.grid.t, f.grid.x
    write_table(
        path,
        ["t", "x", "value"],
        ((t[i], x[j], f.values[i, j]) for i in range(len(t)) for j in range(len(x))),
    )


def write_solution_csv(path, sol) -> None:
    t, x = sol.grid.t, sol.grid.x
    kind = sol.companion_kind.value
    write_table(
        path,
        ["t", "x", "u", "companion", "companion_kind"],
        ((t[i], x[j], sol.u[i, j], sol.companion[i, j], kind) for i in range(len(t)) for j in range(len(x))),
    )


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
