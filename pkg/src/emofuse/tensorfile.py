"""Bit-exact binary tensor container.

Layout (all integers little-endian):
    bytes 0-3   magic "LSGT"
    bytes 4-7   format version, u32 (currently 1)
    byte  8     dtype code, u8 (0 = 32-bit float)
    byte  9     rank, u8
    then        rank extents, u64 each
    then        payload: row-major little-endian floats, 4 * prod(dims) bytes
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"LSGT"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0


class TensorFileError(ValueError):
    """Base class for tensor-container format violations."""


class BadMagicError(TensorFileError):
    pass


class UnsupportedVersionError(TensorFileError):
    pass


class UnsupportedDtypeError(TensorFileError):
    pass


class TruncatedPayloadError(TensorFileError):
    pass


def write_tensor(path, tensor) -> None:
    """Write a float32 array (or Tensor) so that read_tensor recovers it bit-exactly."""
    arr = np.asarray(getattr(tensor, "data", tensor), dtype=np.float32)
    if arr.ndim > 0 and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<BB", DTYPE_FLOAT32, arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedPayloadError(f"file ends inside {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"unsupported format version {version}")
        dtype_code, rank = struct.unpack("<BB", _read_exact(fh, 2, "dtype/rank"))
        if dtype_code != DTYPE_FLOAT32:
            raise UnsupportedDtypeError(f"unsupported dtype code {dtype_code}")
        dims = [struct.unpack("<Q", _read_exact(fh, 8, "dims"))[0] for _ in range(rank)]
        if any(d < 1 for d in dims):
            raise TensorFileError(f"non-positive extent in dims {dims}")
        count = 1
        for d in dims:
            count *= d
        payload = _read_exact(fh, 4 * count, "payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32, copy=False).reshape(dims).copy()
