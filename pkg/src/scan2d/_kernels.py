"""numba kernels behind :mod:`scan2d.parallel`.

Every kernel that moves data between the main arrays and its local buffers
bumps a row of an ``int64`` counts array (column order from :mod:`scan2d.memsim`).
Locals named ``*_loc`` model tile-local storage and are never counted.
"""

import math

import numpy as np
from numba import njit

from ._elementwise import softplus, softplus_grad

# counts columns
_RD, _WR, _INTER, _CARRY, _PAD = 0, 1, 2, 3, 4


@njit(cache=True, nogil=True)
def scan_segments(a, b, offsets, carries, out):
    """Inclusive first-order scan of each segment ``offsets[s]:offsets[s+1]`` seeded by ``carries[s]``."""
    for s in range(offsets.size - 1):
        h = carries[s]
        for k in range(offsets[s], offsets[s + 1]):
            h = a[k] * h + b[k]
            out[k] = h


@njit(cache=True, nogil=True)
def _uniform_offsets(T, P):
    # T segments of length T, plus one trailing pad segment when P > T*T
    n = T + 1 if P > T * T else T
    off = np.empty(n + 1, np.int64)
    for s in range(T + 1):
        off[s] = s * T
    if n > T:
        off[n] = P
    return off


@njit(cache=True, nogil=True)
def tile_forward(kh, kw, T, P, x, z, B, C, A, D, bias, ph, pv, y, counts):
    """Fused forward pass over one tile.

    The tile lives in a ``(P, N)`` local buffer laid out row-major over the
    padded ``T x T`` block plus trailing pad; cells outside the grid hold the
    identity ``(1, 0)``. All ``N`` state dimensions advance together so their
    independent recurrences overlap. Per element the arithmetic is exactly
    ``a * h_prev + b``, the same as the sequential oracle.
    """
    H, W, N = B.shape
    KH, KW = ph.shape[0], ph.shape[1]
    i0, j0 = kh * T, kw * T
    th, tw = min(T, H - i0), min(T, W - j0)
    dt = x.dtype
    c = counts[kh, kw]

    a_loc = np.ones((P, N), dt)
    u_loc = np.zeros((P, N), dt)
    hh = np.empty((P, N), dt)
    hv = np.empty((P, N), dt)
    x_loc = np.zeros(P, dt)
    prev = np.zeros(N, dt)
    zero = prev[0]

    for i in range(th):
        for j in range(tw):
            k = i * T + j
            xx = x[i0 + i, j0 + j]
            dd = softplus(z[i0 + i, j0 + j] + bias)
            x_loc[k] = xx
            for d in range(N):
                a_loc[k, d] = math.exp(dd * A[d])
                u_loc[k, d] = dd * B[i0 + i, j0 + j, d] * xx
    c[_RD] += (2 + N) * th * tw

    # horizontal: one segment per tile row, seeded by the left carry
    for i in range(T):
        if kw > 0 and i < th:
            for d in range(N):
                prev[d] = ph[kh, kw - 1, i, d]
            c[_CARRY] += N
        else:
            prev[:] = 0
        for j in range(T):
            k = i * T + j
            for d in range(N):
                prev[d] = a_loc[k, d] * prev[d] + u_loc[k, d]
                hh[k, d] = prev[d]
        if kw < KW - 1 and i < th:
            for d in range(N):
                ph[kh, kw, i, d] = prev[d]
            c[_CARRY] += N
    for k in range(T * T, P):
        for d in range(N):
            hh[k, d] = a_loc[k, d] * 0 + u_loc[k, d]

    # vertical: one segment per tile column, seeded by the top carry;
    # all columns advance row by row
    for j in range(T):
        k = j
        if kh > 0 and j < tw:
            for d in range(N):
                hv[k, d] = a_loc[k, d] * pv[kh - 1, kw, j, d] + hh[k, d]
            c[_CARRY] += N
        else:
            for d in range(N):
                hv[k, d] = a_loc[k, d] * 0 + hh[k, d]
    for i in range(1, T):
        for j in range(T):
            k = i * T + j
            for d in range(N):
                hv[k, d] = a_loc[k, d] * hv[k - T, d] + hh[k, d]
    for k in range(T * T, P):
        for d in range(N):
            hv[k, d] = a_loc[k, d] * 0 + hh[k, d]
    if kh < KH - 1:
        for j in range(tw):
            k = (T - 1) * T + j
            for d in range(N):
                pv[kh, kw, j, d] = hv[k, d]
        c[_CARRY] += N * tw

    for i in range(th):
        for j in range(tw):
            k = i * T + j
            acc = zero
            for d in range(N):
                acc = acc + C[i0 + i, j0 + j, d] * hv[k, d]
            y[i0 + i, j0 + j] = acc + D * x_loc[k]
    c[_RD] += N * th * tw
    c[_WR] += th * tw
    c[_PAD] += 2 * N * (P - th * tw)


@njit(cache=True, nogil=True)
def tiled_forward_all(T, P, x, z, B, C, A, D, bias, ph, pv, y, counts):
    for kh in range(ph.shape[0]):
        for kw in range(ph.shape[1]):
            tile_forward(kh, kw, T, P, x, z, B, C, A, D, bias, ph, pv, y, counts)


@njit(cache=True, nogil=True)
def tile_backward(kh, kw, T, P, x, z, B, C, A, D, bias, ph, pv, dy,
                  rh, rv, dx, dz, dB, dC, dA_part, dbias_part, dD_part):
    """Recompute the tile's states from the saved carries, then run both reverse scans.

    ``rh[kh, kw, i, d]`` / ``rv[kh, kw, j, d]`` receive ``a * G`` at the tile's first
    column / row, which is what the left / upper neighbour needs.
    """
    H, W, N = B.shape
    KH, KW = ph.shape[0], ph.shape[1]
    i0, j0 = kh * T, kw * T
    th, tw = min(T, H - i0), min(T, W - j0)
    dt = x.dtype

    delta_loc = np.empty((T, T), dt)
    ddelta = np.zeros((T, T), dt)
    ah = np.empty(P, dt)
    bh = np.empty(P, dt)
    oh = np.empty(P, dt)
    av = np.empty(P, dt)
    bv = np.empty(P, dt)
    ov = np.empty(P, dt)
    gv = np.empty(P, dt)
    gh = np.empty(P, dt)
    off = _uniform_offsets(T, P)
    cin = np.zeros(off.size - 1, dt)
    hleft = np.zeros(T, dt)
    hup = np.zeros(T, dt)

    for i in range(th):
        for j in range(tw):
            delta_loc[i, j] = softplus(z[i0 + i, j0 + j] + bias)

    for d in range(N):
        ad = A[d]
        for i in range(T):
            for j in range(T):
                k = i * T + j
                if i < th and j < tw:
                    dd = delta_loc[i, j]
                    ah[k] = math.exp(dd * ad)
                    bh[k] = dd * B[i0 + i, j0 + j, d] * x[i0 + i, j0 + j]
                else:
                    ah[k] = 1
                    bh[k] = 0
        for k in range(T * T, P):
            ah[k] = 1
            bh[k] = 0
        hleft[:] = 0
        hup[:] = 0
        cin[:] = 0
        if kw > 0:
            for i in range(th):
                hleft[i] = ph[kh, kw - 1, i, d]
                cin[i] = hleft[i]
        scan_segments(ah, bh, off, cin, oh)
        for j in range(T):
            for i in range(T):
                k = j * T + i
                if i < th and j < tw:
                    av[k] = ah[i * T + j]
                    bv[k] = oh[i * T + j]
                else:
                    av[k] = 1
                    bv[k] = 0
        for k in range(T * T, P):
            av[k] = 1
            bv[k] = 0
        cin[:] = 0
        if kh > 0:
            for j in range(tw):
                hup[j] = pv[kh - 1, kw, j, d]
                cin[j] = hup[j]
        scan_segments(av, bv, off, cin, ov)

        # reverse vertical scan, column-major with rows reversed:
        # G[i] = C dy[i] + a[i+1] G[i+1]
        for j in range(T):
            for m in range(T):
                k = j * T + m
                if m < th and j < tw:
                    i = th - 1 - m
                    av[k] = 1 if m == 0 else ah[(i + 1) * T + j]
                    bv[k] = C[i0 + i, j0 + j, d] * dy[i0 + i, j0 + j]
                else:
                    av[k] = 1
                    bv[k] = 0
        for k in range(T * T, P):
            av[k] = 1
            bv[k] = 0
        cin[:] = 0
        if kh < KH - 1:
            for j in range(tw):
                cin[j] = rv[kh + 1, kw, j, d]
        scan_segments(av, bv, off, cin, gv)
        for j in range(tw):
            rv[kh, kw, j, d] = ah[j] * gv[j * T + th - 1]

        # reverse horizontal scan, row-major with columns reversed:
        # Ghor[j] = G[j] + a[j+1] Ghor[j+1]
        for i in range(T):
            for m in range(T):
                k = i * T + m
                if i < th and m < tw:
                    j = tw - 1 - m
                    bh[k] = gv[j * T + th - 1 - i]
                    ah_next = ah[i * T + j + 1] if m > 0 else 1
                    av[k] = ah_next
                else:
                    av[k] = 1
                    bh[k] = 0
        for k in range(T * T, P):
            av[k] = 1
            bh[k] = 0
        cin[:] = 0
        if kw < KW - 1:
            for i in range(th):
                cin[i] = rh[kh, kw + 1, i, d]
        scan_segments(av, bh, off, cin, gh)
        for i in range(th):
            rh[kh, kw, i, d] = ah[i * T] * gh[i * T + tw - 1]

        acc = dA_part[kh, kw, d]
        for i in range(th):
            for j in range(tw):
                g_hor = gh[i * T + tw - 1 - j]
                g = gv[j * T + th - 1 - i]
                a = ah[i * T + j]
                left = oh[i * T + j - 1] if j > 0 else hleft[i]
                up = ov[(j * T) + i - 1] if i > 0 else hup[j]
                da = g_hor * left + g * up
                dd = delta_loc[i, j]
                bb = B[i0 + i, j0 + j, d]
                xx = x[i0 + i, j0 + j]
                ddelta[i, j] += da * a * ad + g_hor * bb * xx
                acc += da * a * dd
                dB[i0 + i, j0 + j, d] = g_hor * dd * xx
                dx[i0 + i, j0 + j] += g_hor * dd * bb
                dC[i0 + i, j0 + j, d] = dy[i0 + i, j0 + j] * ov[j * T + i]
        dA_part[kh, kw, d] = acc

    sb = dbias_part[kh, kw]
    sd = dD_part[kh, kw]
    for i in range(th):
        for j in range(tw):
            v = ddelta[i, j] * softplus_grad(z[i0 + i, j0 + j] + bias)
            dz[i0 + i, j0 + j] = v
            sb += v
            g = dy[i0 + i, j0 + j]
            sd += g * x[i0 + i, j0 + j]
            dx[i0 + i, j0 + j] += D * g
    dbias_part[kh, kw] = sb
    dD_part[kh, kw] = sd


@njit(cache=True, nogil=True)
def tiled_backward_all(T, P, x, z, B, C, A, D, bias, ph, pv, dy,
                       rh, rv, dx, dz, dB, dC, dA_part, dbias_part, dD_part):
    for kh in range(ph.shape[0] - 1, -1, -1):
        for kw in range(ph.shape[1] - 1, -1, -1):
            tile_backward(kh, kw, T, P, x, z, B, C, A, D, bias, ph, pv, dy,
                          rh, rv, dx, dz, dB, dC, dA_part, dbias_part, dD_part)


@njit(cache=True, nogil=True)
def naive_row_launch(x_row, z_row, b_row, ad, bias, P, inter_row, counts):
    """One 1D selective scan over a row for a single state; writes the state row to main storage."""
    n = x_row.size
    dt = x_row.dtype
    a_loc = np.empty(P, dt)
    b_loc = np.empty(P, dt)
    o_loc = np.empty(P, dt)
    for k in range(n):
        dd = softplus(z_row[k] + bias)
        a_loc[k] = math.exp(dd * ad)
        b_loc[k] = dd * b_row[k] * x_row[k]
    for k in range(n, P):
        a_loc[k] = 1
        b_loc[k] = 0
    off = np.array([0, n, P], np.int64) if P > n else np.array([0, n], np.int64)
    scan_segments(a_loc, b_loc, off, np.zeros(off.size - 1, dt), o_loc)
    for k in range(n):
        inter_row[k] = o_loc[k]
    counts[_RD] += 3 * n
    counts[_INTER] += n
    counts[_PAD] += P - n


@njit(cache=True, nogil=True)
def naive_col_launch(z_col, c_col, inter_col, x_col, ad, bias, D, P, first, last, y_col, counts):
    """One 1D scan down a column for a single state, reading the state map back and accumulating ``y``."""
    n = z_col.size
    dt = z_col.dtype
    a_loc = np.empty(P, dt)
    b_loc = np.empty(P, dt)
    o_loc = np.empty(P, dt)
    for k in range(n):
        dd = softplus(z_col[k] + bias)
        a_loc[k] = math.exp(dd * ad)
        b_loc[k] = inter_col[k]
    for k in range(n, P):
        a_loc[k] = 1
        b_loc[k] = 0
    off = np.array([0, n, P], np.int64) if P > n else np.array([0, n], np.int64)
    scan_segments(a_loc, b_loc, off, np.zeros(off.size - 1, dt), o_loc)
    for k in range(n):
        v = c_col[k] * o_loc[k]
        if not first:
            v = y_col[k] + v
        if last:
            v = v + D * x_col[k]
        y_col[k] = v
    counts[_RD] += 2 * n + (0 if first else n) + (n if last else 0)
    counts[_INTER] += n
    counts[_WR] += n
    counts[_PAD] += P - n


@njit(cache=True, nogil=True)
def chunked_scan1d(x, z, B, C, A, D, bias, chunk, g, y, counts):
    """1D selective scan over a flattened sequence in chunks; the carry stays local between chunks."""
    L, N = B.shape
    dt = x.dtype
    carry = np.zeros(N, dt)
    P = -(-chunk // g) * g
    a_loc = np.empty(P, dt)
    b_loc = np.empty(P, dt)
    o_loc = np.empty(P, dt)
    delta_loc = np.empty(chunk, dt)
    y_loc = np.empty(chunk, dt)
    cin = np.zeros(2, dt)
    for c0 in range(0, L, chunk):
        n = min(chunk, L - c0)
        Pn = -(-n // g) * g
        off = np.array([0, n, Pn], np.int64) if Pn > n else np.array([0, n], np.int64)
        for k in range(n):
            delta_loc[k] = softplus(z[c0 + k] + bias)
            y_loc[k] = 0
        counts[_RD] += 2 * n
        for d in range(N):
            for k in range(n):
                dd = delta_loc[k]
                a_loc[k] = math.exp(dd * A[d])
                b_loc[k] = dd * B[c0 + k, d] * x[c0 + k]
            for k in range(n, Pn):
                a_loc[k] = 1
                b_loc[k] = 0
            cin[0] = carry[d]
            scan_segments(a_loc, b_loc, off, cin, o_loc)
            carry[d] = o_loc[n - 1]
            for k in range(n):
                y_loc[k] += C[c0 + k, d] * o_loc[k]
            counts[_RD] += 2 * n
            counts[_PAD] += Pn - n
        for k in range(n):
            y[c0 + k] = y_loc[k] + D * x[c0 + k]
        counts[_WR] += n
