"""Validated containers shared by every part of the package.

All public indices are 0-based: cell ``(i, j)`` is row ``i`` and column ``j``
of a row-major ``H x W`` grid. Arrays handed to a container are copied and
frozen (``writeable=False``), so instances can be shared across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Arrays that must agree in shape do not."""


def _frozen(arr, dtype=None) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def _float_dtype(arr: np.ndarray, dtype) -> np.dtype:
    if dtype is not None:
        dt = np.dtype(dtype)
    elif arr.dtype in SUPPORTED_DTYPES:
        dt = arr.dtype
    else:
        dt = np.dtype(np.float64)
    if dt not in SUPPORTED_DTYPES:
        raise TypeError(f"unsupported dtype {dt}; use float32 or float64")
    return dt


@dataclass(frozen=True)
class FeatureGrid:
    """An ``H x W`` (scalar channel) or ``H x W x D`` grid of finite reals."""

    data: np.ndarray

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        dt = _float_dtype(arr, dtype)
        if arr.ndim not in (2, 3):
            raise ShapeError(f"grid must be 2-D or 3-D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"grid dimensions must be positive, got {arr.shape}")
        arr = _frozen(arr, dt)
        _check_finite("grid", arr)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def plane(self) -> np.ndarray:
        """The grid as an ``(H, W)`` array; only valid for one channel."""
        if self.channels != 1:
            raise ShapeError(f"expected a single-channel grid, got D={self.channels}")
        return self.data.reshape(self.height, self.width)

    def __eq__(self, other):
        if not isinstance(other, FeatureGrid):
            return NotImplemented
        return (
            self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


def as_plane(x, dtype=None) -> np.ndarray:
    """Coerce a FeatureGrid or array-like to a frozen, finite ``(H, W)`` array."""
    if isinstance(x, FeatureGrid):
        arr = x.plane()
        if dtype is not None and arr.dtype != np.dtype(dtype):
            arr = _frozen(arr, dtype)
        return arr
    arr = np.asarray(x)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ShapeError(f"expected an (H, W) grid, got shape {arr.shape}")
    return FeatureGrid(arr, dtype).data


@dataclass(frozen=True)
class SelectiveInputs:
    """Per-position selective inputs: pre-softplus time step and B/C grids.

    ``z_raw`` is ``(H, W)``; ``B`` and ``C`` are ``(H, W, N)``.
    """

    z_raw: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __init__(self, z_raw, B, C, dtype=None):
        z = np.asarray(z_raw)
        dt = _float_dtype(z, dtype)
        z = _frozen(z, dt)
        B = _frozen(B, dt)
        C = _frozen(C, dt)
        if z.ndim != 2:
            raise ShapeError(f"z_raw must be (H, W), got {z.shape}")
        if B.ndim != 3 or C.ndim != 3:
            raise ShapeError("B and C must be (H, W, N)")
        if B.shape != C.shape:
            raise ShapeError(f"B {B.shape} and C {C.shape} disagree")
        if B.shape[:2] != z.shape:
            raise ShapeError(f"B/C grid {B.shape[:2]} does not match z_raw {z.shape}")
        if B.shape[2] < 1:
            raise ShapeError("state dimension N must be >= 1")
        for name, arr in (("z_raw", z), ("B", B), ("C", C)):
            _check_finite(name, arr)
        object.__setattr__(self, "z_raw", z)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def shape(self) -> tuple[int, int]:
        return self.z_raw.shape

    @property
    def n_state(self) -> int:
        return self.B.shape[2]

    @property
    def dtype(self) -> np.dtype:
        return self.z_raw.dtype

    def astype(self, dtype) -> "SelectiveInputs":
        return SelectiveInputs(self.z_raw, self.B, self.C, dtype=dtype)


@dataclass(frozen=True)
class ScanParams:
    """Input-independent scan parameters: per-state rates ``A``, skip ``D``, softplus ``bias``."""

    A: np.ndarray
    D: float = 0.0
    bias: float = 0.0

    def __init__(self, A, D=0.0, bias=0.0):
        A = _frozen(np.atleast_1d(np.asarray(A, dtype=np.float64)))
        if A.ndim != 1 or A.size < 1:
            raise ShapeError("A must be a non-empty vector of N rates")
        _check_finite("A", A)
        if not (math.isfinite(D) and math.isfinite(bias)):
            raise ValueError("D and bias must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "D", float(D))
        object.__setattr__(self, "bias", float(bias))

    @property
    def n_state(self) -> int:
        return self.A.size

    @property
    def stable(self) -> bool:
        """True when every rate is negative, so each decay factor lies in (0, 1)."""
        return bool(np.all(self.A < 0))


@dataclass(frozen=True)
class LinOpElement:
    """The affine update ``h -> a*h + b``."""

    a: float = 1.0
    b: float = 0.0

    def apply(self, h):
        return self.a * h + self.b

    def then(self, second: "LinOpElement") -> "LinOpElement":
        """Apply ``self`` first and ``second`` afterwards."""
        return LinOpElement(second.a * self.a, second.a * self.b + second.b)


IDENTITY = LinOpElement(1.0, 0.0)


@dataclass(frozen=True)
class TileConfig:
    """Square ``tile x tile`` blocking of an ``height x width`` grid."""

    tile: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("tile", "height", "width"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def k_h(self) -> int:
        return -(-self.height // self.tile)

    @property
    def k_w(self) -> int:
        return -(-self.width // self.tile)

    def extent(self, kh: int, kw: int) -> tuple[int, int, int, int]:
        """``(row0, col0, rows, cols)`` of tile ``(kh, kw)`` clipped to the grid."""
        i0, j0 = kh * self.tile, kw * self.tile
        return i0, j0, min(self.tile, self.height - i0), min(self.tile, self.width - j0)


@dataclass(frozen=True)
class MaskedGrid:
    """Patch embeddings plus a tissue mask and the padding token used elsewhere."""

    patches: np.ndarray
    tissue: np.ndarray
    padding_token: np.ndarray

    def __init__(self, patches, tissue, padding_token):
        patches = _frozen(patches, _float_dtype(np.asarray(patches), None))
        tissue = _frozen(tissue, bool)
        token = _frozen(np.asarray(padding_token), patches.dtype)
        if patches.ndim != 3:
            raise ShapeError(f"patches must be (H, W, D), got {patches.shape}")
        if tissue.shape != patches.shape[:2]:
            raise ShapeError(f"mask {tissue.shape} does not match grid {patches.shape[:2]}")
        if token.shape != (patches.shape[2],):
            raise ShapeError(f"padding token must have shape ({patches.shape[2]},)")
        _check_finite("padding token", token)
        # Raw values under the mask are never read, so they need not be finite.
        _check_finite("tissue patches", patches[tissue])
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "tissue", tissue)
        object.__setattr__(self, "padding_token", token)
