"""Two-level memory model: element transfers between a slow main store and tile-local storage.

The engines in :mod:`scan2d.parallel` increment a :class:`TrafficCounter` as they
move data; :func:`simulate_traffic` predicts the same counts in closed form.
Counts are element transfers, so byte totals are ``count * itemsize``.

Counting model (``L = H*W``, ``N`` states, ``g`` work granularity, ``ceil_g`` rounds up
to a multiple of ``g``):

``cub1d``
    One pass over the row-major sequence in chunks, state carried in registers.
    Reads ``x`` and ``z_raw`` once and ``B``, ``C`` once per state: ``(2 + 2N) L``;
    writes ``y`` once: ``L``. Each chunk of ``n`` elements is padded to ``ceil_g(n)``
    per state.
``naive2d``
    One 1D launch per (row, state) and per (column, state). Row launches read
    ``x, z_raw, B`` and write the horizontal state map; column launches read
    ``z_raw, C`` and the state map back, accumulate into ``y`` (re-reading it after
    the first state) and read ``x`` on the last state for the skip term:
    reads ``6 N L``, writes ``N L``, intermediate ``2 N L``. Every launch pads its
    row or column to ``ceil_g``.
``tiled2d``
    One visit per tile. Payload as ``cub1d``. Carries move only between
    neighbouring tiles, each the length of the shared edge, read once and
    written once: ``2 N ((K_W - 1) H + (K_H - 1) W)``. Each tile is padded to
    ``T x T`` and the flattened tile to ``ceil_g(T*T)``, once per state and direction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

VARIANTS = ("cub1d", "naive2d", "tiled2d")
GRANULARITY = 32
CHUNK = 2048

# column order of engine-side count arrays
PAYLOAD_READS, PAYLOAD_WRITES, INTERMEDIATE, CARRY, PADDING = range(5)


def ceil_to(n: int, multiple: int) -> int:
    return -(-n // multiple) * multiple


@dataclass(frozen=True)
class MemReport:
    payload_reads: int
    payload_writes: int
    intermediate_traffic: int
    carry_traffic: int
    padding_elements: int
    flops: int

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative")

    @property
    def total_traffic(self) -> int:
        return self.payload_reads + self.payload_writes + self.intermediate_traffic + self.carry_traffic

    def to_dict(self) -> dict:
        return {k: int(v) for k, v in asdict(self).items()}


class TrafficCounter:
    """Mutable tally filled in by the engines' counting hooks."""

    def __init__(self):
        self.counts = np.zeros(5, dtype=np.int64)

    def add(self, counts) -> None:
        self.counts += np.asarray(counts, dtype=np.int64).reshape(-1, 5).sum(axis=0)

    def report(self, flops: int = 0) -> MemReport:
        c = [int(v) for v in self.counts]
        return MemReport(c[PAYLOAD_READS], c[PAYLOAD_WRITES], c[INTERMEDIATE], c[CARRY], c[PADDING], int(flops))


def _chunk_lengths(L: int, chunk: int):
    full, rest = divmod(L, chunk)
    return [chunk] * full + ([rest] if rest else [])


def simulate_traffic(variant: str, height: int, width: int, n_state: int, tile: int | None = None,
                     granularity: int = GRANULARITY, chunk: int = CHUNK) -> MemReport:
    """Closed-form transfer counts for one forward pass of ``variant``."""
    H, W, N = height, width, n_state
    if min(H, W, N) < 1:
        raise ValueError("height, width and n_state must be positive")
    L = H * W
    g = granularity
    if variant == "cub1d":
        pad = N * sum(ceil_to(n, g) - n for n in _chunk_lengths(L, chunk))
        counts = ((2 + 2 * N) * L, L, 0, 0, pad)
    elif variant == "naive2d":
        pad = N * (H * (ceil_to(W, g) - W) + W * (ceil_to(H, g) - H))
        counts = (6 * N * L, N * L, 2 * N * L, 0, pad)
    elif variant == "tiled2d":
        if tile is None or tile < 1:
            raise ValueError("tiled2d needs a positive tile size")
        kh, kw = -(-H // tile), -(-W // tile)
        carry = 2 * N * ((kw - 1) * H + (kh - 1) * W)
        pad = 2 * N * (kh * kw * ceil_to(tile * tile, g) - L)
        counts = ((2 + 2 * N) * L, L, 0, carry, pad)
    else:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return MemReport(*counts, flops=count_flops(variant, H, W, N))


def carry_traffic_bound(height: int, width: int, n_state: int, tile: int) -> int:
    """Upper bound that charges every tile a full ``T``-long row and column, read and written, per state."""
    kh, kw = -(-height // tile), -(-width // tile)
    return 2 * n_state * kh * kw * 2 * tile


@dataclass(frozen=True)
class PaddingWaste:
    pad_per_row: float
    pad_per_column: float
    waste_fraction: float


def padding_waste(height: int, width: int, granularity: int = GRANULARITY, scheme: str = "fullRowScan") -> PaddingWaste:
    """Identity padding needed to run row and column scans at a fixed work granularity.

    ``fullRowScan`` scans every row and column as its own block, each padded to a
    multiple of ``granularity``. ``segmented`` packs all rows (or all columns) into
    one flat block, so only ``H*W`` is rounded up; the pads are reported amortised
    per row and per column.
    """
    H, W, g = height, width, granularity
    if min(H, W, g) < 1:
        raise ValueError("dimensions and granularity must be positive")
    if scheme == "fullRowScan":
        pr, pc = ceil_to(W, g) - W, ceil_to(H, g) - H
        processed = H * ceil_to(W, g) + W * ceil_to(H, g)
        return PaddingWaste(pr, pc, (H * pr + W * pc) / processed)
    if scheme == "segmented":
        pads = ceil_to(H * W, g) - H * W
        return PaddingWaste(pads / H, pads / W, pads / ceil_to(H * W, g))
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass(frozen=True)
class FlopModel:
    """Per-element operation counts.

    Defaults charge a multiply and an add per state and scan direction, one
    multiply-accumulate per state for the readout and two operations for the
    skip term. Discretisation (``delta*A``, ``delta*B*x``, softplus, exp) is left
    uncounted; set ``discretize_per_state`` to include it.
    """

    discretize_per_state: int = 0
    scan_per_state_per_direction: int = 2
    readout_per_state: int = 1
    skip: int = 2


_DIRECTIONS = {"1d": 1, "cub1d": 1, "seq1d": 1, "2d": 2, "naive2d": 2, "tiled2d": 2, "seq2d": 2}


def count_flops(variant: str, height: int, width: int, n_state: int, model: FlopModel = FlopModel()) -> int:
    if variant not in _DIRECTIONS:
        raise ValueError(f"unknown variant {variant!r}")
    if min(height, width, n_state) < 1:
        raise ValueError("dimensions must be positive")
    per_state = (model.discretize_per_state
                 + model.scan_per_state_per_direction * _DIRECTIONS[variant]
                 + model.readout_per_state)
    return height * width * (per_state * n_state + model.skip)
