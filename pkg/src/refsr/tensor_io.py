"""Minimal binary tensor exchange format (".tnsr").

Layout, little-endian throughout:

    bytes 0-3   magic "TNSR"
    byte  4     version (1)
    byte  5     dtype: 1 = 32-bit float, 2 = 64-bit float
    byte  6     ndim (1-4)
    byte  7     reserved (0)
    next        ndim unsigned 32-bit extents
    rest        row-major payload

Round trips are bit-exact for both supported precisions.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
MAX_NDIM = 4

_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class TensorFormatError(ValueError):
    """Base class for exchange-format violations."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class UnsupportedDtypeError(TensorFormatError):
    pass


class InvalidHeaderError(TensorFormatError):
    pass


class TruncatedFileError(TensorFormatError):
    pass


class NonFiniteDataError(TensorFormatError):
    pass


def write_tensor(t: np.ndarray, path) -> None:
    """Write a float32/float64 tensor of 1-4 dimensions."""
    t = np.asarray(t)
    dtype = t.dtype.newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise UnsupportedDtypeError(
            f"only float32/float64 tensors are supported, got {t.dtype}"
        )
    if not 1 <= t.ndim <= MAX_NDIM:
        raise InvalidHeaderError(f"ndim must be 1-{MAX_NDIM}, got {t.ndim}")
    if not np.isfinite(t).all():
        raise NonFiniteDataError("refusing to write NaN/Inf payload")
    header = MAGIC + struct.pack("<BBBB", VERSION, _DTYPE_CODES[dtype], t.ndim, 0)
    extents = struct.pack(f"<{t.ndim}I", *t.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(extents)
        fh.write(np.ascontiguousarray(t, dtype=dtype).tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a ".tnsr" file back into a numpy array, validating the payload."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: file shorter than the 8-byte header")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    version, dtype_code, ndim, reserved = struct.unpack("<BBBB", raw[4:8])
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype code {dtype_code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise InvalidHeaderError(f"{path}: ndim {ndim} outside 1-{MAX_NDIM}")
    if reserved != 0:
        raise InvalidHeaderError(f"{path}: reserved byte is {reserved}, expected 0")
    extents_end = 8 + 4 * ndim
    if len(raw) < extents_end:
        raise TruncatedFileError(f"{path}: truncated extent list")
    shape = struct.unpack(f"<{ndim}I", raw[8:extents_end])
    dtype = _CODE_DTYPES[dtype_code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = raw[extents_end:]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    if len(payload) > expected:
        raise InvalidHeaderError(
            f"{path}: {len(payload) - expected} trailing bytes after payload"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if not np.isfinite(data).all():
        raise NonFiniteDataError(f"{path}: payload contains NaN or Inf")
    return data.astype(dtype.newbyteorder("="), copy=True)
