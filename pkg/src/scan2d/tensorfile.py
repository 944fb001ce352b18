"""Reader and writer for the little-endian ``T2DM`` binary tensor format.

Layout::

    b"T2DM"          magic, 4 bytes
    version          u8, always 1
    dtype            u8, 0 = float32, 1 = float64
    ndim             u8
    reserved         u8, must be 0
    dims             ndim x u64 little-endian
    payload          row-major values, little-endian

Several records may be concatenated in one stream; :func:`read_array` consumes
exactly one record and leaves the stream positioned after it.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .grid import FeatureGrid, ScanParams, SelectiveInputs, ShapeError

MAGIC = b"T2DM"
VERSION = 1
HEADER = struct.Struct("<4sBBBB")
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TensorFormatError(ValueError):
    """Base class for malformed T2DM streams."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class UnsupportedDtypeError(TensorFormatError):
    pass


class BadHeaderError(TensorFormatError):
    pass


class TruncatedTensorError(TensorFormatError):
    pass


class NonFiniteTensorError(TensorFormatError):
    pass


class TensorWriteError(OSError):
    """The sink failed; ``offset`` is the number of bytes written before the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _as_array(tensor) -> np.ndarray:
    arr = tensor.data if isinstance(tensor, FeatureGrid) else np.asarray(tensor)
    if arr.dtype.kind == "f" and not arr.dtype.isnative:
        arr = arr.astype(arr.dtype.newbyteorder("="))
    if arr.dtype not in _DTYPE_CODE:
        raise UnsupportedDtypeError(f"cannot encode dtype {arr.dtype}")
    if arr.ndim > 255:
        raise ShapeError("at most 255 dimensions")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteTensorError("refusing to write non-finite values")
    return arr


def encode(tensor) -> bytes:
    """Serialise a FeatureGrid or float array to T2DM bytes."""
    arr = _as_array(tensor)
    head = HEADER.pack(MAGIC, VERSION, _DTYPE_CODE[arr.dtype], arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
    return head + dims + payload


def write_tensor(tensor, sink) -> int:
    """Write one record to ``sink`` (a path or binary file object); return the byte count."""
    blob = encode(tensor)
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            return _write_all(fh, blob)
    return _write_all(sink, blob)


def _write_all(fh, blob: bytes) -> int:
    view = memoryview(blob)
    done = 0
    while done < len(blob):
        try:
            n = fh.write(view[done:])
        except OSError as exc:
            raise TensorWriteError(str(exc), done) from exc
        if n is None:  # unbuffered raw streams may return None; assume full write
            n = len(blob) - done
        if n <= 0:
            raise TensorWriteError("sink accepted no bytes", done)
        done += n
    return done


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if buf is None or len(buf) < n:
        got = 0 if buf is None else len(buf)
        raise TruncatedTensorError(f"truncated {what}: needed {n} bytes, got {got}")
    return buf


def read_array(source) -> np.ndarray:
    """Read one record from a path, bytes, or binary stream into a native-endian array."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        source = io.BytesIO(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return read_array(fh)

    head = _read_exact(source, HEADER.size, "header")
    magic, version, code, ndim, reserved = HEADER.unpack(head)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if code not in _CODES:
        raise UnsupportedDtypeError(f"unsupported dtype code {code}")
    if reserved != 0:
        raise BadHeaderError(f"reserved byte must be 0, got {reserved}")
    dims = struct.unpack(f"<{ndim}Q", _read_exact(source, 8 * ndim, "dimensions"))
    dt = _CODES[code]
    count = 1
    for d in dims:
        count *= d
    payload = _read_exact(source, count * dt.itemsize, "payload")
    arr = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    if not np.all(np.isfinite(arr)):
        raise NonFiniteTensorError("payload contains NaN or Inf")
    return arr


def read_tensor(source) -> FeatureGrid:
    """Read one record as a FeatureGrid (the record must be 2-D or 3-D)."""
    arr = read_array(source)
    if arr.ndim not in (2, 3):
        raise ShapeError(f"record has {arr.ndim} dims; a grid needs 2 or 3")
    return FeatureGrid(arr)


def write_scan_params(path, inputs: SelectiveInputs, params: ScanParams) -> int:
    """Store auxiliary scan inputs as five concatenated records.

    Order: ``z_raw (H,W)``, ``B (H,W,N)``, ``C (H,W,N)``, ``A (N,)``, ``[D, bias] (2,)``.
    """
    dt = inputs.dtype
    with open(path, "wb") as fh:
        n = 0
        for arr in (inputs.z_raw, inputs.B, inputs.C, params.A.astype(dt),
                    np.array([params.D, params.bias], dtype=dt)):
            n += write_tensor(arr, fh)
    return n


def read_scan_params(path) -> tuple[SelectiveInputs, ScanParams]:
    with open(path, "rb") as fh:
        z, B, C, A, tail = (read_array(fh) for _ in range(5))
    if tail.shape != (2,):
        raise ShapeError("last params record must hold [D, bias]")
    return SelectiveInputs(z, B, C), ScanParams(A, float(tail[0]), float(tail[1]))
