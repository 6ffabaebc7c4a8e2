"""Binary snapshot format for nodal fields.

Byte layout (all integers little-endian):

==========  ====  =====================================================
offset      type  meaning
==========  ====  =====================================================
0           4s    magic ``b"SLNS"``
4           u32   format version, currently 1
8           u32   spatial dimension
12          u32   field rank (0 scalar, 1 vector, 2 tensor)
16          u32   nodes per axis ``n``
20          f64   torus period ``L``
28          f64   sample time of the slice
36          u32   header extension length in bytes (0 or 4)
40          ...   extension payload: u32 ``path_index`` when length is 4
...         f64   node values, little-endian
==========  ====  =====================================================

Values are flattened with the component index fastest (row-major over the
component axes for rank 2), then the node index along axis 0, with the
last spatial axis slowest.  Equivalently: the array is transposed so its
spatial axes appear in reverse order ahead of the component axes, then
serialized in C order.
"""

from __future__ import annotations

import struct

import numpy as np

from .grid import Field, TorusGrid

__all__ = ["MAGIC", "VERSION", "write_snapshot", "read_snapshot", "describe"]

MAGIC = b"SLNS"
VERSION = 1

_HEADER = struct.Struct("<4sIIIIddI")


def _disk_order(values, dim):
    """Transpose so C-order serialization matches the documented layout."""
    rank = values.ndim - dim
    axes = tuple(range(dim - 1, -1, -1)) + tuple(range(dim, dim + rank))
    return np.transpose(values, axes)


def write_snapshot(path, field, time, path_index=None):
    """Serialize a :class:`Field` and its sample time to ``path``."""
    grid = field.grid
    ext = b"" if path_index is None else struct.pack("<I", int(path_index))
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        grid.dim,
        field.rank,
        grid.n,
        float(grid.length),
        float(time),
        len(ext),
    )
    payload = np.ascontiguousarray(
        _disk_order(field.values, grid.dim), dtype="<f8"
    ).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ext)
        fh.write(payload)


def read_snapshot(path):
    """Read a snapshot; returns ``(field, time, meta)``.

    ``meta`` carries ``path_index`` (or ``None``) from the header
    extension block.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, version, dim, rank, n, length, time, ext_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    offset = _HEADER.size
    path_index = None
    if ext_len == 4:
        (path_index,) = struct.unpack_from("<I", raw, offset)
    elif ext_len != 0:
        raise ValueError(f"{path}: unknown header extension of {ext_len} bytes")
    offset += ext_len

    grid = TorusGrid(dim=dim, n=n, length=length)
    count = n**dim * dim**rank
    if (len(raw) - offset) < 8 * count:
        raise ValueError(f"{path}: expected {count} values, file too short")
    flat = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    disk_shape = (n,) * dim + (dim,) * rank
    values = flat.reshape(disk_shape)
    # Undo the serialization transpose.
    axes = tuple(range(dim - 1, -1, -1)) + tuple(range(dim, dim + rank))
    values = np.transpose(values, axes).copy()
    return Field(grid, values), float(time), {"path_index": path_index}


def describe(path):
    """Header summary plus basic field statistics, for CLI inspection."""
    field, time, meta = read_snapshot(path)
    grid = field.grid
    values = field.values
    if field.rank == 0:
        magnitude = np.abs(values)
    else:
        magnitude = np.sqrt(np.sum(values.reshape(grid.shape + (-1,)) ** 2, axis=-1))
    info = {
        "dim": grid.dim,
        "rank": field.rank,
        "n": grid.n,
        "length": grid.length,
        "time": time,
        "path_index": meta["path_index"],
        "sup": float(magnitude.max()),
        "rms": float(np.sqrt(np.mean(magnitude**2))),
        "mean": [float(m) for m in np.atleast_1d(
            values.mean(axis=tuple(range(grid.dim)))
        ).ravel()],
    }
    if field.rank == 1:
        from .grid import div_values

        info["sup_divergence"] = float(np.abs(div_values(grid, values)).max())
    return info
