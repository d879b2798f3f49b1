"""Reader/writer for the ``BEVG`` grid dump format.

Layout (little-endian)::

    b"BEVG" | u32 version | u32 dims[3] | float32 values (row-major)

Feature images use dims ``(H, W, C + |D|)`` with the per-pixel feature
vector first and the depth distribution last.  Semantic grids use
``(X, Y, n_classes)``; a grid sequence stacks frames along the channel
axis, ``channel = frame * n_classes + class``.
"""

import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError

MAGIC = b"BEVG"
VERSION = 1
_HEADER = struct.Struct("<4sI3I")


def write_bevg(path, values):
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"BEVG stores 3-D arrays, got shape {arr.shape}")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes(order="C"))
    return path


def read_bevg(path):
    """Read a dump into a float64 array of shape ``dims``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, *dims = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    n = int(np.prod(dims))
    body = raw[_HEADER.size:]
    if len(body) != 4 * n:
        raise FormatError(f"{path}: expected {4 * n} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(dims).astype(np.float64)


def seq_to_channels(values):
    """``(T, X, Y, C)`` -> ``(X, Y, T*C)`` in frame-major channel order."""
    t, x, y, c = values.shape
    return np.transpose(values, (1, 2, 0, 3)).reshape(x, y, t * c)


def channels_to_seq(values, n_classes):
    x, y, tc = values.shape
    if tc % n_classes:
        raise FormatError(f"{tc} channels is not a multiple of {n_classes} classes")
    return np.transpose(values.reshape(x, y, tc // n_classes, n_classes), (2, 0, 1, 3))
