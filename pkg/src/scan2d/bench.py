"""Benchmark, verification and gradient-check harnesses behind the command line.

Random instances draw ``A`` from U(-1, 0) and ``x``, ``z_raw``, ``B``, ``C``,
``D``, ``bias`` from a unit normal with a seeded generator, so ``exp(delta*A)``
stays in (0, 1) and long benchmark loops remain well scaled.

Relative errors are normwise: ``max|got - want| / max|want|`` (plain absolute
error when ``want`` is identically zero).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .grid import ScanParams, SelectiveInputs
from .memsim import MemReport, TrafficCounter, count_flops, simulate_traffic
from .parallel import chunked_scan1d, naive_scan2d, tiled_scan2d_backward, tiled_scan2d_forward
from .reference import discretize_arrays, scan2d_sequential, selective_scan1d, selective_scan2d

VARIANTS = ("seq1d", "seq2d", "cub1d", "naive2d", "tiled2d")
DTYPES = {"f32": np.float32, "f64": np.float64}
VERIFY_TILES = (1, 2, 3, 8, 64)
TOLERANCE = {"f64": 1e-12, "f32": 1e-5}
TILE_INVARIANCE_TOL = {"f64": 1e-10, "f32": 1e-5}
GRAD_REL_TOL = 1e-6
GRAD_ABS_TOL = 1e-9
GRAD_SMALL = 1e-6


def random_instance(height: int, width: int, n_state: int, seed: int = 0, dtype=np.float64):
    """Seeded ``(x, inputs, params)``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((height, width))
    z = rng.standard_normal((height, width))
    B = rng.standard_normal((height, width, n_state))
    C = rng.standard_normal((height, width, n_state))
    A = -rng.uniform(0.0, 1.0, n_state)
    D, bias = rng.standard_normal(2)
    return x.astype(dtype), SelectiveInputs(z, B, C, dtype=dtype), ScanParams(A, float(D), float(bias))


def run_variant(variant: str, x, inputs, params, tile: int | None = None, threads: int | None = None,
                counter: TrafficCounter | None = None) -> np.ndarray:
    """Forward output ``(H, W)`` of one variant."""
    if variant == "seq1d":
        return selective_scan1d(x, inputs, params)
    if variant == "seq2d":
        return selective_scan2d(x, inputs, params).y
    if variant == "cub1d":
        return chunked_scan1d(x, inputs, params, counter=counter)
    if variant == "naive2d":
        return naive_scan2d(x, inputs, params, counter=counter)
    if variant == "tiled2d":
        return tiled_scan2d_forward(x, inputs, params, tile or 8, threads=threads, counter=counter)[0]
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def rel_error(got, want) -> float:
    got, want = np.asarray(got, np.float64), np.asarray(want, np.float64)
    err = float(np.max(np.abs(got - want), initial=0.0))
    scale = float(np.max(np.abs(want), initial=0.0))
    return err / scale if scale > 0 else err


# --------------------------------------------------------------------------
# benchmarks

@dataclass(frozen=True)
class BenchResult:
    variant: str
    height: int
    width: int
    state_dim: int
    tile: int | None
    dtype: str
    repetitions: int
    wall_time_per_rep: list
    throughput: float   # feature maps per second
    flops: int
    mem_report: dict | None

    def to_dict(self) -> dict:
        return asdict(self)


def _mem_variant(variant: str) -> str | None:
    return {"seq1d": None, "seq2d": None}.get(variant, variant)


def benchmark(variant: str, height: int, width: int, n_state: int, tile: int | None = 8, reps: int = 10,
              warmup: int = 2, dtype: str = "f32", seed: int = 0, threads: int | None = None) -> BenchResult:
    """Time ``reps`` warm forward passes after ``warmup`` discarded ones."""
    if reps < 1 or warmup < 0:
        raise ValueError("reps must be >= 1 and warmup >= 0")
    x, inputs, params = random_instance(height, width, n_state, seed, DTYPES[dtype])
    for _ in range(warmup):
        run_variant(variant, x, inputs, params, tile, threads)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        run_variant(variant, x, inputs, params, tile, threads)
        times.append(time.perf_counter() - t0)
    mv = _mem_variant(variant)
    report = simulate_traffic(mv, height, width, n_state, tile).to_dict() if mv else None
    flops_kind = "1d" if variant in ("seq1d", "cub1d") else "2d"
    return BenchResult(variant, height, width, n_state, tile if variant == "tiled2d" else None, dtype, reps,
                       times, reps / sum(times), count_flops(flops_kind, height, width, n_state), report)


def measure_traffic(variant: str, height: int, width: int, n_state: int, tile: int | None = None,
                    seed: int = 0) -> MemReport:
    """Counts reported by the engine's own hooks on a random instance."""
    x, inputs, params = random_instance(height, width, n_state, seed)
    counter = TrafficCounter()
    run_variant(variant, x, inputs, params, tile, counter=counter)
    return counter.report(count_flops(variant, height, width, n_state))


# --------------------------------------------------------------------------
# verification suite

def parse_size(text: str) -> tuple[int, int]:
    h, _, w = text.lower().partition("x")
    return int(h), int(w or h)


def verify_cases(height: int, width: int, n_state: int, seed: int, dtype: str = "f64", tiles=VERIFY_TILES):
    """Yield one result dict per check: oracle equivalence of every engine, then tile invariance."""
    x, inputs, params = random_instance(height, width, n_state, seed, DTYPES[dtype])
    want = selective_scan2d(x, inputs, params).y
    tol = TOLERANCE[dtype]
    base = dict(height=height, width=width, state_dim=n_state, seed=seed, dtype=dtype)
    by_tile = {}
    for T in tiles:
        y = run_variant("tiled2d", x, inputs, params, T)
        by_tile[T] = y
        err = rel_error(y, want)
        yield dict(base, check="oracle", variant="tiled2d", tile=T, max_rel_error=err, tolerance=tol,
                   passed=err <= tol)
    err = rel_error(run_variant("naive2d", x, inputs, params), want)
    yield dict(base, check="oracle", variant="naive2d", tile=None, max_rel_error=err, tolerance=tol,
               passed=err <= tol)
    err = rel_error(run_variant("cub1d", x, inputs, params), selective_scan1d(x, inputs, params))
    yield dict(base, check="oracle", variant="cub1d", tile=None, max_rel_error=err, tolerance=tol,
               passed=err <= tol)
    ref_tile = max(tiles)
    tol_t = TILE_INVARIANCE_TOL[dtype]
    for T in tiles:
        err = rel_error(by_tile[T], by_tile[ref_tile])
        yield dict(base, check="tile_invariance", variant="tiled2d", tile=T, max_rel_error=err,
                   tolerance=tol_t, passed=err <= tol_t)


# --------------------------------------------------------------------------
# gradient check

GRAD_GROUPS = ("dx", "dz_raw", "dA", "dB", "dC", "dD", "dbias")
_PRIMAL = {"dx": "x", "dz_raw": "z", "dA": "A", "dB": "B", "dC": "C", "dD": "D", "dbias": "bias"}


def _loss_extended(p: dict, dy) -> np.longdouble:
    g = discretize_arrays(p["x"], p["z"], p["B"], p["A"], p["bias"])
    return (scan2d_sequential(g, p["C"], p["D"], p["x"]).y * dy).sum()


def finite_difference_grads(x, inputs: SelectiveInputs, params: ScanParams, dy, step: float = 1e-6) -> dict:
    """Central differences of ``sum(dy * y)`` through the sequential oracle in extended precision."""
    ld = np.longdouble
    p = {"x": np.asarray(x, ld), "z": inputs.z_raw.astype(ld), "B": inputs.B.astype(ld),
         "C": inputs.C.astype(ld), "A": params.A.astype(ld), "D": np.asarray(params.D, ld),
         "bias": np.asarray(params.bias, ld)}
    dy = np.asarray(dy, ld)
    h = ld(step)
    out = {}
    for group in GRAD_GROUPS:
        name = _PRIMAL[group]
        base = p[name]
        grad = np.zeros(base.shape, ld)
        for idx in np.ndindex(base.shape):
            vals = []
            for sign in (1, -1):
                moved = base.copy()
                moved[idx] = base[idx] + sign * h
                vals.append(_loss_extended(dict(p, **{name: moved}), dy))
            grad[idx] = (vals[0] - vals[1]) / (2 * h)
        out[group] = grad.astype(np.float64)
    return out


def compare_gradients(analytic: dict, numeric: dict) -> list[dict]:
    """Per group: max relative error where ``|analytic| >= 1e-6``, max absolute error below that."""
    rows = []
    for group in GRAD_GROUPS:
        a = np.asarray(analytic[group], np.float64)
        n = np.asarray(numeric[group], np.float64)
        small = np.abs(a) < GRAD_SMALL
        diff = np.abs(a - n)
        rel = diff[~small] / np.abs(a[~small])
        max_rel = float(rel.max(initial=0.0))
        max_abs = float(diff[small].max(initial=0.0))
        rows.append(dict(group=group, max_rel_error=max_rel, max_abs_error_small=max_abs,
                         passed=max_rel <= GRAD_REL_TOL and max_abs <= GRAD_ABS_TOL))
    return rows


def gradcheck(height: int, width: int, n_state: int, seed: int = 0, tile: int = 2, threads: int | None = None,
              step: float = 1e-6) -> list[dict]:
    x, inputs, params = random_instance(height, width, n_state, seed)
    dy = np.random.default_rng(seed + 1_000_003).standard_normal((height, width))
    _, saved, _ = tiled_scan2d_forward(x, inputs, params, tile, threads=threads)
    analytic = tiled_scan2d_backward(saved, dy, threads=threads).as_dict()
    numeric = finite_difference_grads(x, inputs, params, dy, step)
    return compare_gradients(analytic, numeric)
