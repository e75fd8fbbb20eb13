"""Binary field snapshots.

Layout (all little-endian):

    magic   4 bytes  b"CRNL"
    version u32      currently 1
    n       u32
    N       u32
    L       f64
    rep     u8       0 = physical, 1 = frequency
    ext     u32      number of f64 extension values (e.g. a direction omega)
    ext[.]  f64 * ext
    data    f64 pairs (re, im), row-major over the grid

The extension block carries per-field metadata such as the direction vector of
a phase field; plain fields write an empty block.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import StructuralError
from .grid import FREQUENCY, PHYSICAL, GridSpec, ScalarField

MAGIC = b"CRNL"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdBI")


def write_field(path, field: ScalarField, extension=()) -> None:
    ext = np.asarray(extension, dtype=np.float64)
    rep_flag = 1 if field.rep == FREQUENCY else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, field.grid.n, field.grid.N,
                              field.grid.L, rep_flag, ext.size))
        if ext.size:
            fh.write(ext.tobytes())
        data = np.empty(field.values.shape + (2,), dtype=np.float64)
        data[..., 0] = field.values.real
        data[..., 1] = field.values.imag
        fh.write(data.tobytes())


def read_field(path):
    """Returns (ScalarField, extension ndarray)."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        magic, version, n, N, L, rep_flag, ext_count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise StructuralError(f"bad magic {magic!r} in {path}")
        if version != VERSION:
            raise StructuralError(f"unsupported field-dump version {version}")
        ext = np.frombuffer(fh.read(8 * ext_count), dtype="<f8").copy()
        grid = GridSpec(n=n, N=N, L=L)
        raw = np.frombuffer(fh.read(), dtype="<f8")
        if raw.size != 2 * grid.num_points:
            raise StructuralError(f"truncated field data in {path}")
        pairs = raw.reshape(grid.shape + (2,))
        values = pairs[..., 0] + 1j * pairs[..., 1]
        rep = FREQUENCY if rep_flag else PHYSICAL
        return ScalarField(grid, values, rep=rep), ext
