"""Counting main-store transfers.

The naive 2D scan writes one horizontal state map per state dimension and reads
it back, so its extra traffic grows like N*H*W. The tiled scan only exchanges
tile edges. Counts come from the engines' own hooks and match the closed form.
"""

from scan2d.bench import measure_traffic
from scan2d.memsim import carry_traffic_bound, padding_waste, simulate_traffic

H = W = 56
print(f"{H}x{W} grid")
print(f"{'N':>3} {'naive extra':>12} {'tiled T=8 extra':>16}")
for N in (1, 2, 4, 8, 16):
    naive = measure_traffic("naive2d", H, W, N)
    tiled = measure_traffic("tiled2d", H, W, N, 8)
    assert naive == simulate_traffic("naive2d", H, W, N)
    assert tiled == simulate_traffic("tiled2d", H, W, N, 8)
    print(f"{N:>3} {naive.intermediate_traffic:>12} {tiled.carry_traffic:>16}")

print("\nnaive/tiled extra traffic at N=16:")
naive = simulate_traffic("naive2d", H, W, 16).intermediate_traffic
for T in (4, 8, 16):
    measured = simulate_traffic("tiled2d", H, W, 16, T).carry_traffic
    bound = carry_traffic_bound(H, W, 16, T)
    print(f"  T={T:<2} measured {naive / measured:5.2f}   per-tile bound {naive / bound:5.2f}   (T/2 = {T / 2:g})")

print("\npadding to a 32-wide work unit on a 14x14 grid:")
for scheme in ("fullRowScan", "segmented"):
    r = padding_waste(14, 14, 32, scheme)
    print(f"  {scheme:<12} {r.pad_per_row:g} pads per row, {r.waste_fraction:.1%} of processed elements")
