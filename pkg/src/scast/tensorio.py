"""Binary tensor file format (SCST).

Layout, all multi-byte fields little-endian:

    bytes 0-3   magic, ASCII "SCST"
    byte  4     format version, 0x01
    byte  5     dtype code: 0 = float32, 1 = uint8, 2 = int32
    byte  6     ndim, 1..4
    byte  7     reserved, 0x00
    next        ndim x u32 dims
    rest        row-major payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    TensorFormatError,
    TruncatedPayloadError,
    UnknownDtypeError,
)

MAGIC = b"SCST"
VERSION = 1
MAX_NDIM = 4

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("u1"): 1,
    np.dtype("<i4"): 2,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def write_tensor(arr: np.ndarray, path: str | Path) -> None:
    """Write `arr` to `path` in SCST format.

    dtype must be float32, uint8 or int32; shape must have 1..4 axes,
    every axis >= 1.
    """
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise UnknownDtypeError(f"unsupported dtype {arr.dtype} for {path}")
    if arr.ndim < 1 or arr.ndim > MAX_NDIM:
        raise TensorFormatError(f"ndim must be 1..{MAX_NDIM}, got {arr.ndim} for {path}")
    if any(d < 1 for d in arr.shape):
        raise TensorFormatError(f"every dim must be >= 1, got {arr.shape} for {path}")
    header = MAGIC + bytes([VERSION, _DTYPE_CODES[dt], arr.ndim, 0])
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=dt).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"writing tensor to {path}: {exc}") from exc


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an SCST file back into a numpy array.

    Raises BadMagicError / UnknownDtypeError / TruncatedPayloadError /
    TensorFormatError for the corresponding malformations.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise OSError(f"reading tensor from {path}: {exc}") from exc

    if len(blob) < 8:
        raise TruncatedPayloadError(f"{path}: file shorter than fixed header (8 bytes)")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}")
    version, dtype_code, ndim, reserved = blob[4], blob[5], blob[6], blob[7]
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise UnknownDtypeError(f"{path}: unknown dtype code {dtype_code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise TensorFormatError(f"{path}: ndim {ndim} outside 1..{MAX_NDIM}")
    if reserved != 0:
        raise TensorFormatError(f"{path}: reserved byte is {reserved}, expected 0")

    dims_end = 8 + 4 * ndim
    if len(blob) < dims_end:
        raise TruncatedPayloadError(f"{path}: header truncated in dims block")
    dims = struct.unpack(f"<{ndim}I", blob[8:dims_end])
    if any(d < 1 for d in dims):
        raise TensorFormatError(f"{path}: zero-sized dim in {dims}")

    dt = _CODE_DTYPES[dtype_code]
    expected = int(np.prod(dims)) * dt.itemsize
    payload = blob[dims_end:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, dims {dims} imply {expected}"
        )
    if len(payload) > expected:
        raise TensorFormatError(
            f"{path}: {len(payload) - expected} trailing bytes after payload"
        )
    return np.frombuffer(payload, dtype=dt).reshape(dims).copy()
