import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scan2d.bench import measure_traffic
from scan2d.memsim import (
    FlopModel,
    MemReport,
    TrafficCounter,
    carry_traffic_bound,
    count_flops,
    padding_waste,
    simulate_traffic,
)


def test_naive_intermediate_56():
    r = simulate_traffic("naive2d", 56, 56, 16)
    assert r.intermediate_traffic == 100_352 and r.carry_traffic == 0


def test_naive_single_state():
    assert simulate_traffic("naive2d", 9, 7, 1).intermediate_traffic == 2 * 63


def test_tiled_carry_bound_56():
    assert carry_traffic_bound(56, 56, 16, 8) == 25_088


def test_tiled_carries_only_cross_inner_edges():
    r = simulate_traffic("tiled2d", 56, 56, 16, 8)
    assert r.carry_traffic == 2 * 16 * (6 * 56 + 6 * 56) == 21_504
    assert r.intermediate_traffic == 0
    assert r.carry_traffic <= carry_traffic_bound(56, 56, 16, 8)


def test_single_tile_has_no_carries():
    assert simulate_traffic("tiled2d", 10, 12, 4, 16).carry_traffic == 0


def test_payload_streams():
    for v, kw in (("cub1d", {}), ("tiled2d", {"tile": 4})):
        r = simulate_traffic(v, 8, 8, 3, **kw)
        assert (r.payload_reads, r.payload_writes) == ((2 + 2 * 3) * 64, 64)


def test_single_state_naive_payload_close_to_tiled():
    naive = simulate_traffic("naive2d", 30, 30, 1)
    tiled = simulate_traffic("tiled2d", 30, 30, 1, 8)
    total = lambda r: r.payload_reads + r.payload_writes + r.intermediate_traffic
    assert total(naive) / total(tiled) < 2.5


def test_invalid_requests():
    with pytest.raises(ValueError):
        simulate_traffic("gpu", 4, 4, 1)
    with pytest.raises(ValueError):
        simulate_traffic("cub1d", 4, 4, 0)
    with pytest.raises(ValueError):
        simulate_traffic("tiled2d", 4, 4, 1)
    with pytest.raises(ValueError):
        MemReport(-1, 0, 0, 0, 0, 0)


@pytest.mark.parametrize("variant, tile", [("cub1d", None), ("naive2d", None), ("tiled2d", 1), ("tiled2d", 3),
                                           ("tiled2d", 8), ("tiled2d", 40)])
@pytest.mark.parametrize("H, W, N", [(1, 1, 1), (7, 13, 2), (33, 31, 3)])
def test_engine_hooks_agree_with_model(variant, tile, H, W, N):
    assert measure_traffic(variant, H, W, N, tile) == simulate_traffic(variant, H, W, N, tile)


def test_cub1d_chunk_padding():
    # 3000 elements: chunks of 2048 (aligned) and 952 (pads to 960)
    assert simulate_traffic("cub1d", 60, 50, 2).padding_elements == 2 * 8


def test_counter_accepts_rows():
    c = TrafficCounter()
    c.add(np.ones((2, 3, 5), np.int64))
    c.add([1, 0, 0, 0, 0])
    assert c.report(5).to_dict() == dict(payload_reads=7, payload_writes=6, intermediate_traffic=6,
                                         carry_traffic=6, padding_elements=6, flops=5)


# -- padding waste --------------------------------------------------------------

def test_padding_waste_14():
    full = padding_waste(14, 14, 32, "fullRowScan")
    seg = padding_waste(14, 14, 32, "segmented")
    assert full.pad_per_row == 18 and full.pad_per_column == 18
    assert full.waste_fraction == pytest.approx(0.5625)
    assert seg.pad_per_row == 2 and seg.pad_per_column == 2


def test_padding_waste_aligned():
    r = padding_waste(32, 32, 32, "fullRowScan")
    assert r.pad_per_row == 0 and r.waste_fraction == 0


def test_padding_waste_bad_scheme():
    with pytest.raises(ValueError):
        padding_waste(4, 4, 32, "diagonal")


@settings(max_examples=200, deadline=None)
@given(H=st.integers(1, 300), W=st.integers(1, 300), g=st.sampled_from([1, 8, 32, 64]))
def test_full_row_scan_never_wastes_less(H, W, g):
    full = padding_waste(H, W, g, "fullRowScan")
    seg = padding_waste(H, W, g, "segmented")
    assert full.waste_fraction >= seg.waste_fraction - 1e-15
    assert full.pad_per_row >= seg.pad_per_row - 1e-12


# -- flops ------------------------------------------------------------------------

def test_flops_near_reported_counts():
    f1, f2 = count_flops("1d", 14, 14, 16), count_flops("2d", 14, 14, 16)
    assert 9_000 / 2 <= f1 <= 9_000 * 2
    assert 16_000 / 2 <= f2 <= 16_000 * 2


@settings(max_examples=100, deadline=None)
@given(H=st.integers(1, 200), W=st.integers(1, 200), N=st.integers(1, 64))
def test_flop_ratio_band(H, W, N):
    assert 1.4 <= count_flops("2d", H, W, N) / count_flops("1d", H, W, N) <= 2.0


def test_flop_model_is_configurable():
    m = FlopModel(discretize_per_state=4, readout_per_state=2)
    assert count_flops("2d", 1, 1, 1, m) == 4 + 4 + 2 + 2
    with pytest.raises(ValueError):
        count_flops("3d", 1, 1, 1)
