"""Binary array dumps readable from any language.

Layout (all little-endian):

    magic    4 bytes  b"QEVA"
    version  uint16   1
    dtype    uint8    1 = complex128 (re, im float64 pairs), 2 = float64
    ndim     uint8
    dims     ndim x uint64
    body     row-major values
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"QEVA"
VERSION = 1
DTYPE_TAGS = {1: np.dtype("<c16"), 2: np.dtype("<f8")}


def write_array(path, array: np.ndarray) -> Path:
    a = np.asarray(array)
    if np.iscomplexobj(a):
        tag = 1
    elif np.issubdtype(a.dtype, np.number):
        tag = 2
    else:
        raise TypeError(f"unsupported dtype {a.dtype}")
    a = np.asarray(a, dtype=DTYPE_TAGS[tag])
    if a.ndim > 255:
        raise ValueError("too many dimensions")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HBB", VERSION, tag, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes(order="C"))
    return path


def read_array(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a QEVA array file")
    version, tag, ndim = struct.unpack_from("<HBB", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported array format version {version}")
    if tag not in DTYPE_TAGS:
        raise ValueError(f"{path}: unknown dtype tag {tag}")
    dims = struct.unpack_from(f"<{ndim}Q", data, 8)
    offset = 8 + 8 * ndim
    dtype = DTYPE_TAGS[tag]
    count = int(np.prod(dims)) if dims else 1
    if len(data) - offset != count * dtype.itemsize:
        raise ValueError(f"{path}: body size does not match header dims {dims}")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(dims).copy()
