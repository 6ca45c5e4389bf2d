"""Structured text records, CSV export and the flat binary field format.

Binary layout (all little-endian)::

    b"FRLP"                     magic
    uint32 version, n, N, M     M = 0 for boundary functions
    float64 L, X, gamma         X = gamma = 0 for boundary functions
    float64 values[...]         layer-major, then boundary axes in C order
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .grid import (
    BoundaryGrid,
    ExtensionField,
    GridFunction,
    make_extension_grid,
    make_line_grid,
    make_torus_grid,
)

__all__ = [
    "format_value",
    "format_record",
    "write_csv",
    "write_binary",
    "read_binary",
    "BINARY_VERSION",
]

MAGIC = b"FRLP"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sIIII3d")


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return "none"
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_value(v) for v in value)
    return str(value).replace("\n", " ")


def format_record(record: dict, prefix: str = "") -> list[str]:
    """Flatten a (nested) mapping into sorted-by-insertion ``key=value`` lines."""
    lines = []
    for key, value in record.items():
        if isinstance(value, dict):
            lines += format_record(value, prefix=f"{prefix}{key}.")
        else:
            lines.append(f"{prefix}{key}={format_value(value)}")
    return lines


def _coords(field):
    if isinstance(field, ExtensionField):
        egrid = field.egrid
        bnd = egrid.boundary
        grids = np.meshgrid(egrid.x, *([bnd.nodes] * bnd.n), indexing="ij")
        names = ["x"] + (["y"] if bnd.n == 1 else ["y1", "y2"])
    else:
        bnd = field.grid
        grids = bnd.mesh()
        names = ["y"] if bnd.n == 1 else ["y1", "y2"]
    return names, [g.ravel() for g in grids]


def write_csv(field, path) -> None:
    """Node coordinates followed by the field value, one node per row."""
    names, cols = _coords(field)
    vals = np.asarray(field.values).ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["value"])
        for row in zip(*cols, vals):
            w.writerow([repr(float(c)) for c in row])


def write_binary(field, path) -> None:
    if isinstance(field, ExtensionField):
        bnd = field.egrid.boundary
        M, X, gamma = field.egrid.M, field.egrid.X, field.egrid.gamma
    else:
        bnd = field.grid
        M, X, gamma = 0, 0.0, 0.0
    header = _HEADER.pack(MAGIC, BINARY_VERSION, bnd.n, bnd.N, M, bnd.L, X, gamma)
    data = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + data)


def read_binary(path, periodic: bool = True, far_field=None):
    """Inverse of :func:`write_binary`; returns a GridFunction or ExtensionField."""
    raw = Path(path).read_bytes()
    magic, version, n, N, M, L, X, gamma = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError("not a field file (bad magic)")
    if version != BINARY_VERSION:
        raise ValueError(f"unsupported field file version {version}")
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float)
    bnd: BoundaryGrid = make_torus_grid(n, L, N) if periodic else make_line_grid(L, N)
    if M == 0:
        return GridFunction(bnd, vals.reshape(bnd.shape), far_field)
    egrid = make_extension_grid(bnd, X, M, gamma)
    return ExtensionField(egrid, vals.reshape(egrid.shape), far_field)
