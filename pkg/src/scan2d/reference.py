"""Sequential, loop-per-cell implementations of every recurrence.

These are the oracles the parallel engines are checked against, so they favour
transparency over speed. All functions are dtype-generic (float32, float64 and
longdouble all work) and use 0-based indices.

Recurrences, with ``a = decay``, ``u = delta * B * x``::

    h_hor[i, j] = a[i, j] * h_hor[i, j-1] + u[i, j]        (zero left boundary)
    h[i, j]     = a[i, j] * h[i-1, j]     + h_hor[i, j]    (zero top boundary)
    y[i, j]     = sum_d C[i, j, d] * h[i, j, d] + D * x[i, j]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._elementwise import exp_array, softplus_array
from .grid import FeatureGrid, ScanParams, SelectiveInputs, ShapeError, as_plane


@dataclass(frozen=True)
class DiscretizedGrids:
    a_bar: np.ndarray    # (H, W, N) per-position decay exp(delta * A)
    bbar_x: np.ndarray   # (H, W, N) per-position input delta * B * x
    delta: np.ndarray    # (H, W) time step softplus(z_raw + bias)

    def __post_init__(self):
        if self.a_bar.shape != self.bbar_x.shape or self.a_bar.shape[:2] != self.delta.shape:
            raise ShapeError("discretized grids disagree in shape")


@dataclass(frozen=True)
class ScanStates:
    h_hor: np.ndarray  # (H, W, N) after the horizontal pass
    h: np.ndarray      # (H, W, N) final states
    y: np.ndarray      # (H, W)


def discretize_arrays(x, z_raw, B, A, bias) -> DiscretizedGrids:
    """Discretise raw arrays of any float dtype."""
    x, z_raw, B = np.asarray(x), np.asarray(z_raw), np.asarray(B)
    if x.shape != z_raw.shape or B.shape[:2] != x.shape:
        raise ShapeError(f"x {x.shape}, z_raw {z_raw.shape}, B {B.shape} disagree")
    A = np.asarray(A, dtype=x.dtype)
    if A.shape != (B.shape[2],):
        raise ShapeError(f"A has shape {A.shape}, expected ({B.shape[2]},)")
    delta = softplus_array(z_raw + x.dtype.type(bias))
    a_bar = exp_array(delta[:, :, None] * A)
    bbar_x = delta[:, :, None] * B * x[:, :, None]
    return DiscretizedGrids(a_bar, bbar_x, delta)


def discretize(x, inputs: SelectiveInputs, params: ScanParams) -> DiscretizedGrids:
    x = as_plane(x, inputs.dtype)
    if x.shape != inputs.shape:
        raise ShapeError(f"x {x.shape} does not match inputs {inputs.shape}")
    if params.n_state != inputs.n_state:
        raise ShapeError(f"params have N={params.n_state}, inputs N={inputs.n_state}")
    return discretize_arrays(x, inputs.z_raw, inputs.B, params.A, params.bias)


def _readout(C, h, D, x):
    y = np.zeros(x.shape, dtype=h.dtype)
    for d in range(h.shape[-1]):
        y = y + C[..., d] * h[..., d]
    return y + x.dtype.type(D) * x


def scan1d_sequential(a_bar, bbar_x, C, D, x, return_states=False):
    """First-order selective scan over a sequence; arrays are ``(L, N)`` and ``x`` is ``(L,)``."""
    a_bar, bbar_x, C, x = map(np.asarray, (a_bar, bbar_x, C, x))
    L = x.shape[0]
    if not (a_bar.shape == bbar_x.shape == C.shape and a_bar.shape[0] == L and x.ndim == 1):
        raise ShapeError("sequence lengths disagree")
    h = np.zeros_like(bbar_x)
    prev = np.zeros(a_bar.shape[1], dtype=bbar_x.dtype)
    for t in range(L):
        prev = a_bar[t] * prev + bbar_x[t]
        h[t] = prev
    y = _readout(C, h, D, x)
    return (y, h) if return_states else y


def scan2d_sequential(g: DiscretizedGrids, C, D, x) -> ScanStates:
    """Horizontal pass along rows, then vertical pass down columns sharing the same decay."""
    C = np.asarray(C)
    x = x.data.reshape(x.height, x.width) if isinstance(x, FeatureGrid) else np.asarray(x)
    H, W, N = g.a_bar.shape
    if C.shape != (H, W, N) or x.shape != (H, W):
        raise ShapeError("C, x and discretized grids disagree")
    zero = np.zeros(N, dtype=g.bbar_x.dtype)

    h_hor = np.empty_like(g.bbar_x)
    for i in range(H):
        left = zero
        for j in range(W):
            left = g.a_bar[i, j] * left + g.bbar_x[i, j]
            h_hor[i, j] = left

    h = np.empty_like(h_hor)
    for j in range(W):
        up = zero
        for i in range(H):
            up = g.a_bar[i, j] * up + h_hor[i, j]
            h[i, j] = up

    return ScanStates(h_hor, h, _readout(C, h, D, x))


def selective_scan2d(x, inputs: SelectiveInputs, params: ScanParams) -> ScanStates:
    """Discretise and run the sequential 2D scan."""
    x = as_plane(x, inputs.dtype)
    return scan2d_sequential(discretize(x, inputs, params), inputs.C, params.D, x)


def selective_scan1d(x, inputs: SelectiveInputs, params: ScanParams) -> np.ndarray:
    """1D selective scan over the row-major flattening, reshaped back to ``(H, W)``."""
    x = as_plane(x, inputs.dtype)
    g = discretize(x, inputs, params)
    a, u, C, xs = flatten_row_major(g.a_bar, g.bbar_x, inputs.C, x)
    return unflatten_row_major(scan1d_sequential(a, u, C, params.D, xs), *x.shape)


def flatten_row_major(*grids):
    """Flatten the two leading ``(H, W)`` axes of each grid into one sequence axis."""
    out = tuple(np.reshape(g, (g.shape[0] * g.shape[1],) + g.shape[2:]) for g in map(np.asarray, grids))
    return out[0] if len(out) == 1 else out


def unflatten_row_major(seq, height: int, width: int) -> np.ndarray:
    seq = np.asarray(seq)
    if seq.shape[0] != height * width:
        raise ShapeError(f"sequence of length {seq.shape[0]} cannot fill {height}x{width}")
    return seq.reshape((height, width) + seq.shape[1:])


def _geometric_partial_sum(a: float, n: int) -> float:
    """``sum_{p=0}^{n} a**p`` with ``0**0 == 1``."""
    if a == 1.0:
        return float(n + 1)
    if a == 0.0:
        return 1.0
    if 0.0 < a:
        la = np.log(a)
        return float(np.expm1((n + 1) * la) / np.expm1(la))
    return (1.0 - a ** (n + 1)) / (1.0 - a)


def closed_form_constant(a_bar: float, bbar_x: float, i: int, j: int) -> float:
    """State at cell ``(i, j)`` for constant decay and input.

    Every upstream cell contributes ``a_bar`` to the power of its Manhattan
    distance, so the double sum factors into two geometric partial sums.
    """
    if i < 0 or j < 0:
        raise ValueError("cell indices must be non-negative")
    return _geometric_partial_sum(a_bar, i) * _geometric_partial_sum(a_bar, j) * bbar_x


def impulse_coefficient(kind: str, source, target, a_bar: float, width: int, height: int | None = None) -> float:
    """Measure how much a unit input at ``source`` contributes to the state at ``target``.

    ``kind`` is ``"2d"`` for the two-pass scan or ``"1d"`` for a 1D scan over the
    row-major flattening. The decay is held constant, ``B`` is one and the raw
    state is read out, so the result is ``a_bar`` raised to the scan distance.
    """
    (si, sj), (ti, tj) = source, target
    height = ti + 1 if height is None else height
    for r, c in (source, target):
        if not (0 <= r < height and 0 <= c < width):
            raise ValueError(f"cell {(r, c)} outside {height}x{width} grid")
    if kind == "2d":
        if si > ti or sj > tj:
            raise ValueError("2D scans only carry information right and down; source is after target")
    elif kind == "1d":
        if si * width + sj > ti * width + tj:
            raise ValueError("source comes after target in row-major order")
    else:
        raise ValueError(f"unknown scan kind {kind!r}")

    a = np.full((height, width, 1), a_bar, dtype=np.float64)
    u = np.zeros_like(a)
    u[si, sj, 0] = 1.0
    x = np.zeros((height, width))
    if kind == "2d":
        states = scan2d_sequential(DiscretizedGrids(a, u, np.ones((height, width))), np.ones_like(a), 0.0, x)
        return float(states.h[ti, tj, 0])
    fa, fu = flatten_row_major(a, u)
    _, h = scan1d_sequential(fa, fu, np.ones_like(fa), 0.0, x.ravel(), return_states=True)
    return float(h[ti * width + tj, 0])
