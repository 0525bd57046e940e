"""Binary tensor files used by checkpoints.

Layout (all little-endian): magic ``TNSR``, version u32, rank u32,
dims u32[rank], dtype tag u32 (0 = float32, 1 = float64), raw data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TensorFormatError(ValueError):
    pass


def save_tensor(path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype not in _TAG_FOR:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    tag = _TAG_FOR[arr.dtype]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<I", tag))
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {data[:4]!r}")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    dims = struct.unpack_from(f"<{rank}I", data, 12)
    (tag,) = struct.unpack_from("<I", data, 12 + 4 * rank)
    if tag not in _DTYPE_TAGS:
        raise TensorFormatError(f"{path}: unknown dtype tag {tag}")
    dtype = _DTYPE_TAGS[tag]
    offset = 16 + 4 * rank
    count = int(np.prod(dims)) if dims else 1
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    out = arr.reshape(dims).astype(dtype.newbyteorder("="), copy=True)
    return out
