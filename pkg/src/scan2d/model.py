"""Forward-only toy MIL model around the 2D scan.

Pipeline: substitute a padding token at non-tissue patches, run ``U`` blocks
(LayerNorm, input projection, depthwise 3x3 conv, SiLU, per-channel 2D
selective scan, SiLU gate, output projection, residual), then pool with a
two-layer attention head restricted to tissue positions.

Grids are ``(H, W, D)`` arrays indexed from 0. Nothing here is trained; weights
are drawn from a seeded generator.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .grid import FeatureGrid, MaskedGrid, ScanParams, SelectiveInputs, ShapeError, TileConfig
from .parallel import resolve_threads, tiled_scan2d_forward

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    d_inner: int = 128    # E, channels scanned
    d_state: int = 16     # N
    attn_hidden: int = 64  # K
    n_blocks: int = 1     # U
    dt_rank: int | None = None

    @property
    def rank(self) -> int:
        return self.dt_rank if self.dt_rank is not None else max(1, math.ceil(self.d_model / 16))


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class BlockWeights:
    norm_scale: np.ndarray   # (D,)
    norm_offset: np.ndarray  # (D,)
    in_proj: np.ndarray      # (D, 2E), stream then gate
    conv: np.ndarray         # (E, 3, 3) depthwise kernels
    conv_bias: np.ndarray    # (E,)
    x_proj: np.ndarray       # (E, R + 2N) -> time-step rank, B, C
    dt_proj: np.ndarray      # (R, E) -> per-channel z_raw
    A: np.ndarray            # (E, N)
    D: np.ndarray            # (E,)
    dt_bias: np.ndarray      # (E,) softplus bias of each channel's scan
    out_proj: np.ndarray     # (E, D)

    def __post_init__(self):
        for f in fields(self):
            arr = np.array(getattr(self, f.name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{f.name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, f.name, arr)
        D, E2 = self.in_proj.shape
        E = E2 // 2
        N = self.A.shape[1]
        R = self.dt_proj.shape[0]
        expected = {
            "norm_scale": (D,), "norm_offset": (D,), "in_proj": (D, 2 * E), "conv": (E, 3, 3),
            "conv_bias": (E,), "x_proj": (E, R + 2 * N), "dt_proj": (R, E), "A": (E, N),
            "D": (E,), "dt_bias": (E,), "out_proj": (E, D),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def d_model(self) -> int:
        return self.in_proj.shape[0]

    @property
    def d_inner(self) -> int:
        return self.A.shape[0]

    @property
    def d_state(self) -> int:
        return self.A.shape[1]

    @property
    def dt_rank(self) -> int:
        return self.dt_proj.shape[0]

    def replace(self, **changes) -> "BlockWeights":
        return replace(self, **changes)

    @classmethod
    def init(cls, config: ModelConfig, seed: int | np.random.Generator = 0) -> "BlockWeights":
        rng = np.random.default_rng(seed)
        D, E, N, R = config.d_model, config.d_inner, config.d_state, config.rank
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), E))
        return cls(
            norm_scale=np.ones(D),
            norm_offset=np.zeros(D),
            in_proj=_uniform(rng, D, (D, 2 * E)),
            conv=_uniform(rng, 9, (E, 3, 3)),
            conv_bias=_uniform(rng, 9, (E,)),
            x_proj=_uniform(rng, E, (E, R + 2 * N)),
            dt_proj=_uniform(rng, R, (R, E)),
            A=-np.tile(np.arange(1, N + 1, dtype=np.float64), (E, 1)),
            D=np.ones(E),
            dt_bias=dt + np.log(-np.expm1(-dt)),  # softplus inverse of dt
            out_proj=_uniform(rng, E, (E, D)),
        )


def silu(v):
    return v / (1.0 + np.exp(-v))


def layer_norm(x, scale, offset, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * scale + offset


def depthwise_conv3x3(x, kernels, bias):
    """Per-channel 3x3 cross-correlation with zero padding; ``x`` is ``(H, W, E)``."""
    H, W, _ = x.shape
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.broadcast_to(bias, x.shape).copy()
    for di in range(3):
        for dj in range(3):
            out += padded[di:di + H, dj:dj + W] * kernels[:, di, dj]
    return out


def _grid_array(x) -> np.ndarray:
    arr = x.data if isinstance(x, FeatureGrid) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"expected an (H, W, D) grid, got shape {arr.shape}")
    return arr


def embed_with_padding(patches: MaskedGrid) -> FeatureGrid:
    """Replace every non-tissue patch by the padding token, leaving a dense grid."""
    if not isinstance(patches, MaskedGrid):
        raise TypeError("expected a MaskedGrid")
    out = np.where(patches.tissue[:, :, None], patches.patches, patches.padding_token)
    return FeatureGrid(out)


def _scan_channel(e, u, z_raw, B, C, w: BlockWeights, tile):
    inputs = SelectiveInputs(z_raw[:, :, e], B, C, dtype=np.float64)
    params = ScanParams(w.A[e], w.D[e], w.dt_bias[e])
    y, _, _ = tiled_scan2d_forward(u[:, :, e], inputs, params, tile, threads=1)
    return y


def block_forward(x, w: BlockWeights, tile: int | TileConfig = 8, workers: int | None = None) -> FeatureGrid:
    """One block; maps ``(H, W, D)`` to ``(H, W, D)``.

    Channels are scanned independently, possibly on ``workers`` threads; each
    writes its own output slice, so the result does not depend on the worker count.
    """
    x = _grid_array(x)
    H, W, Dm = x.shape
    if Dm != w.d_model:
        raise ShapeError(f"grid has {Dm} channels, block expects {w.d_model}")
    if isinstance(tile, TileConfig):
        tile = tile.tile
    E, N, R = w.d_inner, w.d_state, w.dt_rank

    xn = layer_norm(x, w.norm_scale, w.norm_offset)
    proj = xn @ w.in_proj
    stream, gate = proj[:, :, :E], proj[:, :, E:]
    u = silu(depthwise_conv3x3(stream, w.conv, w.conv_bias))
    sel = u @ w.x_proj
    z_raw = sel[:, :, :R] @ w.dt_proj
    B = np.ascontiguousarray(sel[:, :, R:R + N])
    C = np.ascontiguousarray(sel[:, :, R + N:])

    scanned = np.empty((H, W, E))
    workers = resolve_threads(workers)
    if workers == 1:
        for e in range(E):
            scanned[:, :, e] = _scan_channel(e, u, z_raw, B, C, w, tile)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for e, y in zip(range(E), pool.map(lambda e: _scan_channel(e, u, z_raw, B, C, w, tile), range(E))):
                scanned[:, :, e] = y

    out = (scanned * silu(gate)) @ w.out_proj
    return FeatureGrid(x + out)


@dataclass(frozen=True)
class AttentionWeights:
    V: np.ndarray    # (D, K)
    v_bias: np.ndarray  # (K,)
    w: np.ndarray    # (K,)
    w_bias: float

    @classmethod
    def init(cls, d_model: int, hidden: int = 64, seed: int | np.random.Generator = 0) -> "AttentionWeights":
        rng = np.random.default_rng(seed)
        return cls(_uniform(rng, d_model, (d_model, hidden)), _uniform(rng, d_model, hidden),
                   _uniform(rng, hidden, hidden), float(_uniform(rng, hidden, ())))


@dataclass(frozen=True)
class SlideFeature:
    aggregate: np.ndarray  # (D,)
    attention: np.ndarray  # (H, W), zero off tissue


def attention_aggregate(features, tissue, weights: AttentionWeights) -> SlideFeature:
    """Attention pooling over tissue positions: ``score = w . tanh(V^T f + b) + c``."""
    f = _grid_array(features)
    tissue = np.asarray(tissue, dtype=bool)
    if tissue.shape != f.shape[:2]:
        raise ShapeError(f"mask {tissue.shape} does not match grid {f.shape[:2]}")
    if weights.V.shape[0] != f.shape[2]:
        raise ShapeError(f"attention expects {weights.V.shape[0]} channels, grid has {f.shape[2]}")
    if not tissue.any():
        raise ValueError("no tissue positions to attend over")
    feats = f[tissue]
    scores = np.tanh(feats @ weights.V + weights.v_bias) @ weights.w + weights.w_bias
    scores = np.exp(scores - scores.max())
    attn = scores / scores.sum()
    amap = np.zeros(tissue.shape)
    amap[tissue] = attn
    return SlideFeature(attn @ feats, amap)


def mil_forward(patches: MaskedGrid, blocks, attention: AttentionWeights, tile: int = 8,
                workers: int | None = None) -> SlideFeature:
    """Padding-token embedding, then every block in turn, then attention pooling."""
    x = embed_with_padding(patches)
    for w in blocks:
        x = block_forward(x, w, tile, workers)
    return attention_aggregate(x, patches.tissue, attention)
