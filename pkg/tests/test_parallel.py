import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scan2d.bench import compare_gradients, finite_difference_grads, random_instance, rel_error
from scan2d.grid import IDENTITY, LinOpElement, ScanParams, SelectiveInputs, ShapeError, TileConfig
from scan2d.memsim import TrafficCounter
from scan2d.parallel import (
    StaleSavedStateError,
    chunked_scan1d,
    linop_compose,
    naive_scan2d,
    resolve_threads,
    segmented_block_scan,
    tiled_scan2d_backward,
    tiled_scan2d_forward,
)
from scan2d.reference import scan1d_sequential, selective_scan1d, selective_scan2d

# -- composition -----------------------------------------------------------

def test_compose_identity_both_sides():
    e = LinOpElement(0.3, -2.0)
    assert linop_compose(IDENTITY, e) == e == linop_compose(e, IDENTITY)


def test_compose_half_one():
    assert linop_compose(LinOpElement(0.5, 1), LinOpElement(0.5, 1)) == LinOpElement(0.25, 1.5)


def test_compose_reset_second():
    assert linop_compose(LinOpElement(7.0, 3.0), LinOpElement(0.0, 2.0)) == LinOpElement(0.0, 2.0)


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=3), finite)
def test_compose_associative_and_matches_application(triple, h):
    e1, e2, e3 = (LinOpElement(a, b) for a, b in triple)
    left = linop_compose(linop_compose(e1, e2), e3)
    right = linop_compose(e1, linop_compose(e2, e3))
    scale = 1 + max(abs(left.a), abs(left.b))
    assert abs(left.a - right.a) <= 1e-12 * scale and abs(left.b - right.b) <= 1e-12 * scale
    assert left.apply(h) == pytest.approx(e3.apply(e2.apply(e1.apply(h))), rel=1e-12, abs=1e-12)


# -- segmented scan ---------------------------------------------------------

@pytest.mark.parametrize("method", ["blelloch", "sequential"])
def test_segmented_prefix_sums(method):
    out = segmented_block_scan(np.ones(3), np.array([1.0, 2, 3]), [3], method=method)
    assert out.tolist() == [1, 3, 6]


@pytest.mark.parametrize("method", ["blelloch", "sequential"])
def test_segments_do_not_talk(method):
    out = segmented_block_scan(np.ones(6), np.array([1.0, 2, 3, 1, 2, 3]), [3, 3], method=method)
    assert out.tolist() == [1, 3, 6, 1, 3, 6]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), L=st.integers(1, 80), cuts=st.lists(st.integers(0, 80), max_size=6),
       g=st.sampled_from([1, 4, 32]))
def test_chained_segments_equal_unsegmented(seed, L, cuts, g):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, L), rng.standard_normal(L)
    full = scan1d_sequential(a[:, None], b[:, None], np.ones((L, 1)), 0.0, np.zeros(L), True)[1][:, 0]
    bounds = sorted({0, L, *(c for c in cuts if c < L)})
    lengths = np.diff(bounds)
    carries = np.array([0.0] + [full[s - 1] for s in bounds[1:-1]])
    for method in ("blelloch", "sequential"):
        out = segmented_block_scan(a, b, lengths, carries, granularity=g, method=method)
        assert rel_error(out, full) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), lengths=st.lists(st.integers(0, 9), min_size=2, max_size=6))
def test_permuting_one_segment_leaves_others(seed, lengths):
    rng = np.random.default_rng(seed)
    n = sum(lengths)
    a, b, c = rng.uniform(0, 1, n), rng.standard_normal(n), rng.standard_normal(len(lengths))
    s = int(rng.integers(len(lengths)))
    lo = sum(lengths[:s])
    perm = rng.permutation(lengths[s]) + lo
    a2, b2 = a.copy(), b.copy()
    a2[lo:lo + lengths[s]], b2[lo:lo + lengths[s]] = a[perm], b[perm]
    keep = np.ones(n, bool)
    keep[lo:lo + lengths[s]] = False
    for method in ("blelloch", "sequential"):
        o1 = segmented_block_scan(a, b, lengths, c, method=method)
        o2 = segmented_block_scan(a2, b2, lengths, c, method=method)
        assert np.array_equal(o1[keep], o2[keep])


def test_segmented_scan_counts_padding():
    counter = TrafficCounter()
    segmented_block_scan(np.ones(196), np.ones(196), [14] * 14, counter=counter)
    assert counter.report().padding_elements == 28


def test_segmented_scan_errors():
    with pytest.raises(ShapeError):
        segmented_block_scan(np.ones(4), np.ones(4), [2, 1])
    with pytest.raises(ShapeError):
        segmented_block_scan(np.ones(4), np.ones(4), [2, 2], [0.0])
    with pytest.raises(ValueError):
        segmented_block_scan(np.ones(4), np.ones(4), [4], method="magic")


# -- tiled forward ----------------------------------------------------------

@pytest.mark.parametrize("H, W, N", [(1, 1, 1), (5, 4, 3), (13, 7, 5), (33, 20, 16)])
@pytest.mark.parametrize("T", [1, 2, 3, 8, 64])
def test_tiled_matches_oracle(H, W, N, T):
    x, inputs, params = random_instance(H, W, N, seed=H * 100 + W)
    want = selective_scan2d(x, inputs, params).y
    y, _, _ = tiled_scan2d_forward(x, inputs, params, T)
    assert rel_error(y, want) <= 1e-12


def test_tiled_single_precision():
    x, inputs, params = random_instance(19, 23, 6, seed=2, dtype=np.float32)
    y, _, _ = tiled_scan2d_forward(x, inputs, params, 4)
    assert y.dtype == np.float32
    assert rel_error(y, selective_scan2d(x, inputs, params).y) <= 1e-5


def test_zero_input_gives_zero_output():
    _, inputs, params = random_instance(6, 7, 3, seed=1)
    y, _, _ = tiled_scan2d_forward(np.zeros((6, 7)), inputs, params, 3)
    assert np.all(y == 0)


@pytest.mark.parametrize("threads", [2, 3, 8])
def test_wavefront_threads_bit_identical(threads):
    x, inputs, params = random_instance(21, 17, 4, seed=9)
    y1, _, c1 = tiled_scan2d_forward(x, inputs, params, 4, threads=1)
    yk, _, ck = tiled_scan2d_forward(x, inputs, params, 4, threads=threads)
    assert np.array_equal(y1, yk)
    assert np.array_equal(c1.ph, ck.ph) and np.array_equal(c1.pv, ck.pv)


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("SCAN2D_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.delenv("SCAN2D_THREADS")
    assert resolve_threads(None) == 1
    with pytest.raises(ValueError):
        resolve_threads(0)


def test_tile_config_and_errors():
    x, inputs, params = random_instance(6, 5, 2)
    y1, _, _ = tiled_scan2d_forward(x, inputs, params, TileConfig(2, 6, 5))
    y2, _, _ = tiled_scan2d_forward(x, inputs, params, 2)
    assert np.array_equal(y1, y2)
    with pytest.raises(ValueError):
        tiled_scan2d_forward(x, inputs, params, 0)
    with pytest.raises(ShapeError):
        tiled_scan2d_forward(x, inputs, params, TileConfig(2, 5, 6))
    with pytest.raises(ShapeError):
        tiled_scan2d_forward(np.ones((5, 6)), inputs, params, 2)


def test_carries_are_neighbour_edges():
    x, inputs, params = random_instance(7, 10, 3, seed=4)
    _, saved, carries = tiled_scan2d_forward(x, inputs, params, 3)
    assert carries.ph.shape == (3, 4, 3, 3)
    assert np.all(carries.prefix_h(1, 0) == 0) and np.all(carries.prefix_v(0, 2) == 0)
    # the last tile row is only 1 high, so only row 0 of its horizontal carries exists
    assert np.all(carries.ph[2, :, 1:] == 0)
    # the last tile column is never read by a right neighbour
    assert np.all(carries.ph[:, -1] == 0)
    # carry equals the oracle's horizontal state at the tile edge
    s = selective_scan2d(x, inputs, params)
    assert np.allclose(carries.ph[1, 0, :, :], s.h_hor[3:6, 2, :], rtol=1e-13, atol=0)
    assert np.allclose(carries.pv[0, 1, :, :], s.h[2, 3:6, :], rtol=1e-13, atol=0)


def test_saved_forward_holds_no_state_maps():
    H, W, N, T = 12, 10, 4, 4
    x, inputs, params = random_instance(H, W, N)
    _, saved, carries = tiled_scan2d_forward(x, inputs, params, T)
    kh, kw = 3, 3
    assert saved.retained_elements == 2 * H * W + 2 * H * W * N + 2 * kh * kw * T * N
    assert carries.ph.flags.writeable is False


# -- naive and 1D engines -----------------------------------------------------

@pytest.mark.parametrize("H, W, N", [(1, 1, 1), (6, 9, 4), (40, 33, 3)])
def test_naive_matches_oracle(H, W, N):
    x, inputs, params = random_instance(H, W, N, seed=7)
    assert rel_error(naive_scan2d(x, inputs, params), selective_scan2d(x, inputs, params).y) <= 1e-12


@pytest.mark.parametrize("chunk", [1, 7, 2048])
def test_chunked_1d_matches_flattened_oracle(chunk):
    x, inputs, params = random_instance(9, 11, 3, seed=8)
    y = chunked_scan1d(x, inputs, params, chunk=chunk)
    assert rel_error(y, selective_scan1d(x, inputs, params)) <= 1e-12


def test_single_row_2d_equals_1d():
    x, inputs, params = random_instance(1, 50, 5, seed=3)
    y2, _, _ = tiled_scan2d_forward(x, inputs, params, 8)
    assert rel_error(y2, chunked_scan1d(x, inputs, params, chunk=16)) <= 1e-12


# -- backward -----------------------------------------------------------------

def _grads(H, W, N, T, seed, threads=1):
    x, inputs, params = random_instance(H, W, N, seed)
    dy = np.random.default_rng(seed + 1).standard_normal((H, W))
    _, saved, _ = tiled_scan2d_forward(x, inputs, params, T)
    return (x, inputs, params, dy), tiled_scan2d_backward(saved, dy, threads=threads)


def test_zero_cotangent_gives_zero_gradients():
    (x, inputs, params, dy), _ = _grads(4, 5, 2, 2, 0)
    _, saved, _ = tiled_scan2d_forward(x, inputs, params, 2)
    g = tiled_scan2d_backward(saved, np.zeros_like(dy))
    for v in g.as_dict().values():
        assert np.all(v == 0)


def test_skip_gradient_is_exact_sum():
    (x, _, _, dy), g = _grads(6, 3, 2, 2, 1)
    tile_order = sum((dy[i:i + 2, j:j + 2] * x[i:i + 2, j:j + 2]).sum() for i in (0, 2, 4) for j in (0, 2))
    assert g.dD == pytest.approx(float((dy * x).sum()), rel=1e-14)
    assert g.dD == pytest.approx(float(tile_order), rel=1e-15)


@pytest.mark.parametrize("T", [1, 2, 3, 8])
def test_backward_matches_finite_differences(T):
    (x, inputs, params, dy), g = _grads(5, 4, 3, T, seed=11)
    rows = compare_gradients(g.as_dict(), finite_difference_grads(x, inputs, params, dy))
    assert all(r["passed"] for r in rows), rows


def test_gradient_shapes_mirror_primals():
    (x, inputs, params, _), g = _grads(5, 4, 3, 2, 2)
    assert g.dx.shape == x.shape and g.dz_raw.shape == x.shape
    assert g.dB.shape == inputs.B.shape and g.dC.shape == inputs.C.shape
    assert g.dA.shape == params.A.shape
    assert all(np.all(np.isfinite(v)) for v in g.as_dict().values())


@pytest.mark.parametrize("threads", [2, 4])
def test_backward_deterministic_across_threads(threads):
    _, g1 = _grads(13, 11, 3, 3, 5, threads=1)
    _, gk = _grads(13, 11, 3, 3, 5, threads=threads)
    for k, v in g1.as_dict().items():
        assert np.array_equal(v, gk.as_dict()[k]), k


def test_backward_tile_invariance():
    _, g1 = _grads(9, 7, 2, 2, 6)
    _, g2 = _grads(9, 7, 2, 9, 6)
    for k, v in g1.as_dict().items():
        assert rel_error(v, g2.as_dict()[k]) <= 1e-12, k


def test_backward_float32_runs():
    x, inputs, params = random_instance(5, 5, 2, dtype=np.float32)
    _, saved, _ = tiled_scan2d_forward(x, inputs, params, 2)
    g = tiled_scan2d_backward(saved, np.ones((5, 5), np.float32))
    assert g.dB.dtype == np.float32


def test_backward_errors():
    x, inputs, params = random_instance(4, 4, 2)
    _, saved, carries = tiled_scan2d_forward(x, inputs, params, 2)
    with pytest.raises(ShapeError):
        tiled_scan2d_backward(saved, np.ones((4, 3)))
    carries.ph.setflags(write=True)
    carries.ph[0, 0, 0, 0] += 1.0
    with pytest.raises(StaleSavedStateError):
        tiled_scan2d_backward(saved, np.ones((4, 4)))
