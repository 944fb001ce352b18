"""Parallel-structured scan engines.

* :func:`segmented_block_scan`: a work-efficient (Blelloch) segmented scan of
  affine elements over one flat, granularity-padded work unit.
* :func:`tiled_scan2d_forward` / :func:`tiled_scan2d_backward`: the fused 2D
  scan, with tile-local horizontal and vertical passes chained through carry
  prefixes, and the adjoint that recomputes states from those carries.
* :func:`naive_scan2d`: one 1D launch per row, column and state, with every
  per-state horizontal map materialised in main storage.
* :func:`chunked_scan1d`: a 1D selective scan over the row-major flattening.

Inputs are ``x`` ``(H, W)`` (array or single-channel FeatureGrid), a
:class:`SelectiveInputs` and :class:`ScanParams`. Computation runs in the
dtype of ``inputs``. Pass a :class:`~scan2d.memsim.TrafficCounter` as
``counter`` to tally main-store transfers.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .grid import FeatureGrid, LinOpElement, ScanParams, SelectiveInputs, ShapeError, TileConfig, as_plane
from .memsim import CHUNK, GRANULARITY, TrafficCounter, ceil_to


def linop_compose(first: LinOpElement, second: LinOpElement) -> LinOpElement:
    """Element equivalent to applying ``first`` and then ``second``."""
    return first.then(second)


def resolve_threads(threads: int | None) -> int:
    """Worker count: explicit value, else ``SCAN2D_THREADS``, else 1."""
    if threads is None:
        threads = int(os.environ.get("SCAN2D_THREADS", "1") or 1)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return int(threads)


# --------------------------------------------------------------------------
# segmented scan

def _combine(f1, a1, b1, f2, a2, b2):
    """Segmented affine operator: ``(left) then (right)``, restarting at right heads."""
    a = np.where(f2, a2, a2 * a1)
    b = np.where(f2, b2, a2 * b1 + b2)
    return f1 | f2, a, b


def _blelloch(flags, a, b):
    n = a.size
    size = 1 << max(0, (n - 1).bit_length())
    f = np.zeros(size, bool)
    A = np.ones(size, a.dtype)
    Bv = np.zeros(size, b.dtype)
    f[:n], A[:n], Bv[:n] = flags, a, b
    f0, A0, B0 = f.copy(), A.copy(), Bv.copy()

    step = 1
    while step < size:  # up-sweep
        right = np.arange(2 * step - 1, size, 2 * step)
        left = right - step
        f[right], A[right], Bv[right] = _combine(f[left], A[left], Bv[left], f[right], A[right], Bv[right])
        step *= 2
    f[-1], A[-1], Bv[-1] = False, 1, 0
    step = size // 2
    while step >= 1:  # down-sweep
        right = np.arange(2 * step - 1, size, 2 * step)
        left = right - step
        tf, tA, tB = f[left].copy(), A[left].copy(), Bv[left].copy()
        f[left], A[left], Bv[left] = f[right], A[right], Bv[right]
        f[right], A[right], Bv[right] = _combine(f[right], A[right], Bv[right], tf, tA, tB)
        step //= 2
    # exclusive prefix combined with each element gives the inclusive result
    _, _, inc = _combine(f, A, Bv, f0, A0, B0)
    return inc[:n]


def segmented_block_scan(a, b, segment_lengths, initial_carries=None, granularity: int = GRANULARITY,
                         method: str = "blelloch", counter: TrafficCounter | None = None) -> np.ndarray:
    """Inclusive states ``h[k] = a[k] * h[k-1] + b[k]`` restarted at every segment.

    Each segment starts from its entry in ``initial_carries`` (default zero). All
    segments share one flat work unit, padded with identity elements ``(1, 0)``
    to a multiple of ``granularity``; the pad outputs are dropped.
    ``method="sequential"`` runs the compiled per-segment loop used by the engines.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("a and b must be 1-D arrays of equal length")
    lengths = np.asarray(segment_lengths, dtype=np.int64)
    if lengths.ndim != 1 or np.any(lengths < 0) or int(lengths.sum()) != a.size:
        raise ShapeError(f"segment lengths sum to {int(lengths.sum())}, expected {a.size}")
    dtype = np.result_type(a, b)
    carries = np.zeros(lengths.size, dtype) if initial_carries is None else np.asarray(initial_carries, dtype)
    if carries.shape != lengths.shape:
        raise ShapeError(f"{carries.size} carries for {lengths.size} segments")
    if granularity < 1:
        raise ValueError("granularity must be positive")

    n = a.size
    padded = ceil_to(max(n, 1), granularity)
    wa = np.ones(padded, dtype)
    wb = np.zeros(padded, dtype)
    wa[:n], wb[:n] = a, b
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    if counter is not None:
        counter.add([2 * n, n, 0, 0, padded - n])

    if method == "sequential":
        off = np.append(offsets, padded) if padded > n else offsets
        cin = np.append(carries, 0) if padded > n else carries
        out = np.empty(padded, dtype)
        K.scan_segments(wa, wb, off.astype(np.int64), cin.astype(dtype), out)
        return out[:n]
    if method != "blelloch":
        raise ValueError(f"unknown method {method!r}")

    heads = np.zeros(padded, bool)
    starts = offsets[:-1][lengths > 0]
    heads[starts] = True
    if padded > n:
        heads[n] = True
    # fold each carry into its segment's head element
    wb[starts] = wa[starts] * carries[lengths > 0] + wb[starts]
    return _blelloch(heads, wa, wb)[:n]


# --------------------------------------------------------------------------
# shared input handling

def _prepare(x, inputs: SelectiveInputs, params: ScanParams):
    if not isinstance(inputs, SelectiveInputs):
        raise TypeError("inputs must be SelectiveInputs")
    dt = inputs.dtype
    x = np.ascontiguousarray(as_plane(x, dt))
    if x.shape != inputs.shape:
        raise ShapeError(f"x {x.shape} does not match inputs {inputs.shape}")
    if params.n_state != inputs.n_state:
        raise ShapeError(f"params have N={params.n_state}, inputs N={inputs.n_state}")
    arrays = (x, np.ascontiguousarray(inputs.z_raw), np.ascontiguousarray(inputs.B),
              np.ascontiguousarray(inputs.C), np.ascontiguousarray(params.A.astype(dt)))
    return arrays, dt.type(params.D), dt.type(params.bias)


def _tile_config(tile, shape) -> TileConfig:
    if isinstance(tile, TileConfig):
        if (tile.height, tile.width) != shape:
            raise ShapeError(f"tile config is for {tile.height}x{tile.width}, grid is {shape[0]}x{shape[1]}")
        return tile
    if tile is None or int(tile) < 1:
        raise ValueError(f"tile size must be >= 1, got {tile!r}")
    return TileConfig(int(tile), *shape)


def _wavefronts(kh: int, kw: int, reverse: bool = False):
    diagonals = range(kh + kw - 1)
    for s in (reversed(diagonals) if reverse else diagonals):
        yield [(r, s - r) for r in range(max(0, s - kw + 1), min(kh, s + 1))]


def _run_wavefronts(fn, kh, kw, threads, reverse=False):
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for front in _wavefronts(kh, kw, reverse):
            list(pool.map(lambda t: fn(*t), front))


# --------------------------------------------------------------------------
# tiled engine

@dataclass(frozen=True)
class CarryState:
    """Carry prefixes written by each tile.

    ``ph[kh, kw, i, d]`` is the last horizontal state of row ``i`` of tile
    ``(kh, kw)``; ``pv[kh, kw, j, d]`` the last vertical state of column ``j``.
    Only entries a neighbour consumes are written; the rest stay zero.
    """

    ph: np.ndarray
    pv: np.ndarray

    def prefix_h(self, kh: int, kw: int) -> np.ndarray:
        """Horizontal prefix seeding tile ``(kh, kw)``: zeros on the left boundary."""
        return np.zeros_like(self.ph[kh, kw]) if kw == 0 else self.ph[kh, kw - 1]

    def prefix_v(self, kh: int, kw: int) -> np.ndarray:
        return np.zeros_like(self.pv[kh, kw]) if kh == 0 else self.pv[kh - 1, kw]

    @property
    def nbytes(self) -> int:
        return self.ph.nbytes + self.pv.nbytes


def _fingerprint(*arrays) -> int:
    # inputs are stored read-only, so only the carries and the cast A are hashed
    crc = 0
    for arr in arrays:
        crc = zlib.crc32(np.ascontiguousarray(arr).view(np.uint8).ravel(), crc)
    return crc


@dataclass(frozen=True)
class SavedForward:
    """What the backward pass needs: the inputs and the tile carries, no state maps."""

    x: np.ndarray
    inputs: SelectiveInputs
    params: ScanParams
    tiles: TileConfig
    carries: CarryState
    granularity: int
    fingerprint: int

    @property
    def retained_elements(self) -> int:
        return (self.x.size + self.inputs.z_raw.size + self.inputs.B.size + self.inputs.C.size
                + self.carries.ph.size + self.carries.pv.size)


class StaleSavedStateError(RuntimeError):
    """Saved forward data changed after it was recorded."""


def tiled_scan2d_forward(x, inputs: SelectiveInputs, params: ScanParams, tile=8, threads: int | None = None,
                         counter: TrafficCounter | None = None, granularity: int = GRANULARITY):
    """Fused tiled 2D selective scan.

    Tiles are visited in row-major order (``threads == 1``) or in anti-diagonal
    wavefronts on a thread pool; both run the same per-tile kernel, so results
    are bit-identical. Returns ``(y, saved, carries)``.
    """
    (xa, z, B, C, A), D, bias = _prepare(x, inputs, params)
    cfg = _tile_config(tile, xa.shape)
    threads = resolve_threads(threads)
    T, N = cfg.tile, inputs.n_state
    P = ceil_to(T * T, granularity)
    dt = xa.dtype
    ph = np.zeros((cfg.k_h, cfg.k_w, T, N), dt)
    pv = np.zeros((cfg.k_h, cfg.k_w, T, N), dt)
    y = np.empty(xa.shape, dt)
    counts = np.zeros((cfg.k_h, cfg.k_w, 5), np.int64)

    if threads == 1:
        K.tiled_forward_all(T, P, xa, z, B, C, A, D, bias, ph, pv, y, counts)
    else:
        def one(kh, kw):
            K.tile_forward(kh, kw, T, P, xa, z, B, C, A, D, bias, ph, pv, y, counts)
        _run_wavefronts(one, cfg.k_h, cfg.k_w, threads)

    if counter is not None:
        counter.add(counts)
    carries = CarryState(ph, pv)
    for arr in (ph, pv, y):
        arr.setflags(write=False)
    saved = SavedForward(xa, inputs, params, cfg, carries, granularity,
                         _fingerprint(A, ph, pv))
    return y, saved, carries


@dataclass(frozen=True)
class GradBundle:
    dx: np.ndarray       # (H, W), skip term plus the delta*B*x pathway
    dz_raw: np.ndarray   # (H, W)
    dA: np.ndarray       # (N,)
    dB: np.ndarray       # (H, W, N)
    dC: np.ndarray       # (H, W, N)
    dD: float
    dbias: float

    def as_dict(self) -> dict:
        return {"dx": self.dx, "dz_raw": self.dz_raw, "dA": self.dA, "dB": self.dB,
                "dC": self.dC, "dD": np.asarray(self.dD), "dbias": np.asarray(self.dbias)}


def tiled_scan2d_backward(saved: SavedForward, dy, threads: int | None = None) -> GradBundle:
    """Gradients of ``sum(dy * y)`` with respect to every scan input.

    Per tile, in reverse order: recompute horizontal and vertical states from the
    saved carries, then run a reverse vertical and a reverse horizontal scan.
    Partial sums for ``dA``, ``dD`` and ``dbias`` are kept per tile and reduced
    in row-major tile order, so results do not depend on ``threads``.
    """
    inputs, params, cfg = saved.inputs, saved.params, saved.tiles
    (xa, z, B, C, A), D, bias = _prepare(saved.x, inputs, params)
    ph, pv = saved.carries.ph, saved.carries.pv
    if _fingerprint(A, ph, pv) != saved.fingerprint or any(a.flags.writeable for a in (xa, z, B, C)):
        raise StaleSavedStateError("inputs or carries changed since the forward pass")
    dt = xa.dtype
    dy = dy.data.reshape(xa.shape) if isinstance(dy, FeatureGrid) else np.asarray(dy)
    if dy.shape != xa.shape:
        raise ShapeError(f"dy {dy.shape} does not match y {xa.shape}")
    dy = np.ascontiguousarray(dy, dtype=dt)
    threads = resolve_threads(threads)

    T, N = cfg.tile, inputs.n_state
    P = ceil_to(T * T, saved.granularity)
    H, W = xa.shape
    rh = np.zeros((cfg.k_h, cfg.k_w, T, N), dt)
    rv = np.zeros((cfg.k_h, cfg.k_w, T, N), dt)
    dx = np.zeros((H, W), dt)
    dz = np.zeros((H, W), dt)
    dB = np.zeros((H, W, N), dt)
    dC = np.zeros((H, W, N), dt)
    dA_part = np.zeros((cfg.k_h, cfg.k_w, N), dt)
    dbias_part = np.zeros((cfg.k_h, cfg.k_w), dt)
    dD_part = np.zeros((cfg.k_h, cfg.k_w), dt)
    args = (xa, z, B, C, A, D, bias, ph, pv, dy, rh, rv, dx, dz, dB, dC, dA_part, dbias_part, dD_part)

    if threads == 1:
        K.tiled_backward_all(T, P, *args)
    else:
        def one(kh, kw):
            K.tile_backward(kh, kw, T, P, *args)
        _run_wavefronts(one, cfg.k_h, cfg.k_w, threads, reverse=True)

    def tile_major_sum(part):
        total = np.zeros(part.shape[2:], dt)
        for kh in range(part.shape[0]):
            for kw in range(part.shape[1]):
                total = total + part[kh, kw]
        return total

    return GradBundle(dx, dz, tile_major_sum(dA_part), dB, dC,
                      float(tile_major_sum(dD_part)), float(tile_major_sum(dbias_part)))


# --------------------------------------------------------------------------
# naive and 1D engines

def naive_scan2d(x, inputs: SelectiveInputs, params: ScanParams, counter: TrafficCounter | None = None,
                 granularity: int = GRANULARITY) -> np.ndarray:
    """Row scans, then column scans, one launch per (row or column, state).

    The horizontal states of all ``N`` state dimensions are written to a full
    ``(N, H, W)`` array between the two passes. Each launch scans one row or
    column padded to a multiple of ``granularity``.
    """
    (xa, z, B, C, A), D, bias = _prepare(x, inputs, params)
    H, W = xa.shape
    N = inputs.n_state
    dt = xa.dtype
    PW, PH = ceil_to(W, granularity), ceil_to(H, granularity)
    states = np.empty((N, H, W), dt)
    y = np.empty((H, W), dt)
    counts = np.zeros(5, np.int64)
    for d in range(N):
        for i in range(H):
            K.naive_row_launch(xa[i], z[i], B[i, :, d], A[d], bias, PW, states[d, i], counts)
    for d in range(N):
        for j in range(W):
            K.naive_col_launch(z[:, j], C[:, j, d], states[d, :, j], xa[:, j], A[d], bias, D, PH,
                               d == 0, d == N - 1, y[:, j], counts)
    if counter is not None:
        counter.add(counts)
    return y


def chunked_scan1d(x, inputs: SelectiveInputs, params: ScanParams, chunk: int = CHUNK,
                   counter: TrafficCounter | None = None, granularity: int = GRANULARITY) -> np.ndarray:
    """1D selective scan over the row-major flattening of the grid; returns ``(H, W)``."""
    (xa, z, B, C, A), D, bias = _prepare(x, inputs, params)
    H, W = xa.shape
    N = inputs.n_state
    if chunk < 1:
        raise ValueError("chunk must be positive")
    y = np.empty(H * W, xa.dtype)
    counts = np.zeros(5, np.int64)
    K.chunked_scan1d(xa.reshape(-1), z.reshape(-1), B.reshape(-1, N), C.reshape(-1, N), A, D, bias,
                     chunk, granularity, y, counts)
    if counter is not None:
        counter.add(counts)
    return y.reshape(H, W)
