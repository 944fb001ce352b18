"""Command line for the scan engines.

Every subcommand prints line-delimited JSON on stdout (``--pretty`` switches to
aligned text). Exit codes: 0 ok, 1 a check failed, 2 usage or input error.
``--threads`` falls back to the ``SCAN2D_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench
from .memsim import VARIANTS as MEM_VARIANTS
from .memsim import simulate_traffic
from .parallel import resolve_threads
from .reference import impulse_coefficient
from .tensorfile import TensorFormatError, read_scan_params, read_tensor, write_tensor

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Printer:
    def __init__(self, pretty: bool):
        self.pretty = pretty

    def __call__(self, record: dict) -> None:
        if self.pretty:
            width = max(map(len, record))
            for k, v in record.items():
                if isinstance(v, float):
                    v = f"{v:.6g}"
                print(f"{k:<{width}}  {v}")
            print()
        else:
            print(json.dumps(record), flush=True)


def _fail(msg: str, code: int = EXIT_FAIL) -> int:
    print(f"scan2d: {msg}", file=sys.stderr)
    return code


def _csv(kind):
    def parse(text):
        try:
            return [kind(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def cmd_scan(args, out) -> int:
    x = read_tensor(args.input)
    if x.channels != 1:
        return _fail(f"scan needs a single-channel grid, {args.input} has {x.channels}", EXIT_USAGE)
    plane = x.plane()
    H, W = plane.shape
    if args.params:
        inputs, params = read_scan_params(args.params)
        inputs = inputs.astype(plane.dtype)
    else:
        _, inputs, params = bench.random_instance(H, W, args.state_dim, args.seed, plane.dtype)
    y = bench.run_variant(args.variant, plane, inputs, params, args.tile, args.threads)
    nbytes = write_tensor(np.asarray(y, plane.dtype), args.output)
    out(dict(variant=args.variant, height=H, width=W, state_dim=inputs.n_state,
             tile=args.tile if args.variant == "tiled2d" else None, output=args.output, bytes=nbytes))
    return EXIT_OK


def cmd_verify(args, out) -> int:
    first_bad = None
    for size in args.sizes:
        H, W = bench.parse_size(size)
        for seed in args.seeds:
            for case in bench.verify_cases(H, W, args.state_dim, seed, args.dtype):
                out(case)
                if not case["passed"] and first_bad is None:
                    first_bad = case
    if first_bad is not None:
        return _fail(f"verify failed: {json.dumps(first_bad)}")
    return EXIT_OK


def cmd_gradcheck(args, out) -> int:
    rows = bench.gradcheck(args.height, args.width, args.state_dim, args.seed, args.tile, args.threads)
    for row in rows:
        out(row)
    bad = [r for r in rows if not r["passed"]]
    return _fail(f"gradcheck failed: {json.dumps(bad[0])}") if bad else EXIT_OK


def cmd_bench(args, out) -> int:
    res = bench.benchmark(args.variant, args.height, args.width, args.state_dim, args.tile, args.reps,
                          args.warmup, args.dtype, args.seed, args.threads)
    out(res.to_dict())
    return EXIT_OK


def cmd_memsim(args, out) -> int:
    if args.variant == "tiled2d" and args.tile is None:
        return _fail("memsim --variant tiled2d needs --tile", EXIT_USAGE)
    predicted = simulate_traffic(args.variant, args.height, args.width, args.state_dim, args.tile)
    measured = bench.measure_traffic(args.variant, args.height, args.width, args.state_dim, args.tile)
    out(predicted.to_dict())
    if measured != predicted:
        return _fail(f"engine counts {measured.to_dict()} disagree with the model {predicted.to_dict()}")
    return EXIT_OK


def cmd_discrepancy(args, out) -> int:
    # vertically adjacent cells in the last column: one step apart in 2D, W apart in 1D
    W = args.width
    src, dst = (0, W - 1), (1, W - 1)
    out(dict(width=W, alpha=args.alpha, source=list(src), target=list(dst),
             coefficient_2d=impulse_coefficient("2d", src, dst, args.alpha, W, 2),
             coefficient_1d=impulse_coefficient("1d", src, dst, args.alpha, W, 2)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scan2d", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--pretty", action="store_true", help="aligned text instead of JSON lines")
    common.add_argument("--threads", type=_positive, default=None, help="worker threads (env SCAN2D_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", parents=[common], help="forward pass on a T2DM tensor")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--variant", choices=bench.VARIANTS, default="tiled2d")
    p.add_argument("--tile", type=_positive, default=8)
    p.add_argument("--state-dim", type=_positive, default=16)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--params", help="T2DM records: z_raw, B, C, A, [D, bias]")
    src.add_argument("--seed", type=int, default=0, help="random parameters from this seed")
    p.set_defaults(fn=cmd_scan)

    p = sub.add_parser("verify", parents=[common], help="oracle-equivalence and tile-invariance suites")
    p.add_argument("--sizes", type=_csv(str), default=["1x1", "5x4", "17x9", "33x33"])
    p.add_argument("--seeds", type=_csv(int), default=[0])
    p.add_argument("--dtype", choices=tuple(bench.DTYPES), default="f64")
    p.add_argument("--state-dim", type=_positive, default=4)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("gradcheck", parents=[common], help="backward pass against finite differences")
    p.add_argument("--height", type=_positive, default=5)
    p.add_argument("--width", type=_positive, default=4)
    p.add_argument("--state-dim", type=_positive, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tile", type=_positive, default=2)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench", parents=[common], help="throughput of one variant")
    p.add_argument("--variant", choices=bench.VARIANTS, required=True)
    p.add_argument("--height", type=_positive, default=200)
    p.add_argument("--width", type=_positive, default=200)
    p.add_argument("--state-dim", type=_positive, default=16)
    p.add_argument("--tile", type=_positive, default=16)
    p.add_argument("--reps", type=_positive, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--dtype", choices=tuple(bench.DTYPES), default="f32")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("memsim", parents=[common], help="modelled transfer counts, checked against the engine")
    p.add_argument("--variant", choices=MEM_VARIANTS, required=True)
    p.add_argument("--height", type=_positive, required=True)
    p.add_argument("--width", type=_positive, required=True)
    p.add_argument("--state-dim", type=_positive, required=True)
    p.add_argument("--tile", type=_positive, default=None)
    p.set_defaults(fn=cmd_memsim)

    p = sub.add_parser("discrepancy", parents=[common], help="1D vs 2D impulse coefficients")
    p.add_argument("--width", type=_positive, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.set_defaults(fn=cmd_discrepancy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        args.threads = resolve_threads(args.threads)
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)
    try:
        return args.fn(args, _Printer(args.pretty))
    except BrokenPipeError:
        # reader went away (e.g. piped into head); nothing left to report
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except (OSError, TensorFormatError, ValueError) as exc:
        return _fail(str(exc), EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
