import json
import subprocess
import sys

import numpy as np
import pytest

from scan2d.bench import random_instance
from scan2d.cli import main
from scan2d.reference import selective_scan1d, selective_scan2d
from scan2d.tensorfile import read_tensor, write_scan_params, write_tensor

BENCH_KEYS = {"variant", "height", "width", "state_dim", "tile", "dtype", "repetitions", "wall_time_per_rep",
              "throughput", "flops", "mem_report"}
MEM_KEYS = {"payload_reads", "payload_writes", "intermediate_traffic", "carry_traffic", "padding_elements", "flops"}


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    lines = [json.loads(line) for line in out.out.splitlines() if line.strip()]
    return code, lines, out.err


def test_discrepancy(capsys):
    code, [rec], _ = run(capsys, "discrepancy", "--width", "3", "--alpha", "0.5")
    assert code == 0
    assert rec["coefficient_2d"] == 0.5 and rec["coefficient_1d"] == 0.125


def test_verify_single_cell(capsys):
    code, lines, _ = run(capsys, "verify", "--sizes", "1x1", "--seeds", "0")
    assert code == 0 and lines
    assert all(r["passed"] and r["max_rel_error"] == 0 for r in lines)


def test_verify_f32(capsys):
    code, lines, _ = run(capsys, "verify", "--sizes", "9x7,4x12", "--seeds", "1,2", "--dtype", "f32")
    assert code == 0
    assert {r["check"] for r in lines} == {"oracle", "tile_invariance"}


def test_memsim_naive(capsys):
    code, [rec], _ = run(capsys, "memsim", "--variant", "naive2d", "--height", "56", "--width", "56",
                         "--state-dim", "16")
    assert code == 0
    assert set(rec) == MEM_KEYS and rec["intermediate_traffic"] == 100_352


def test_memsim_tiled_needs_tile(capsys):
    code, _, err = run(capsys, "memsim", "--variant", "tiled2d", "--height", "8", "--width", "8",
                       "--state-dim", "2")
    assert code == 2 and "--tile" in err


def test_memsim_detects_disagreement(capsys, monkeypatch):
    from scan2d import bench
    from scan2d.memsim import MemReport
    monkeypatch.setattr(bench, "measure_traffic", lambda *a, **k: MemReport(0, 0, 0, 0, 0, 0))
    code, _, err = run(capsys, "memsim", "--variant", "cub1d", "--height", "4", "--width", "4",
                       "--state-dim", "1")
    assert code == 1 and "disagree" in err


def test_bench_schema(capsys):
    code, [rec], _ = run(capsys, "bench", "--variant", "tiled2d", "--height", "16", "--width", "12",
                         "--state-dim", "4", "--tile", "4", "--reps", "3", "--warmup", "1")
    assert code == 0
    assert set(rec) == BENCH_KEYS and set(rec["mem_report"]) == MEM_KEYS
    assert len(rec["wall_time_per_rep"]) == 3
    assert rec["throughput"] == pytest.approx(3 / sum(rec["wall_time_per_rep"]), rel=1e-9)


def test_bench_sequential_has_no_mem_report(capsys):
    code, [rec], _ = run(capsys, "bench", "--variant", "seq1d", "--height", "4", "--width", "4",
                         "--state-dim", "2", "--reps", "1", "--warmup", "0")
    assert code == 0 and rec["mem_report"] is None and rec["tile"] is None


def test_gradcheck(capsys):
    code, lines, _ = run(capsys, "gradcheck", "--height", "4", "--width", "3", "--state-dim", "2", "--seed", "1")
    assert code == 0
    assert [r["group"] for r in lines] == ["dx", "dz_raw", "dA", "dB", "dC", "dD", "dbias"]
    assert all(r["passed"] for r in lines)


def test_gradcheck_failure_exit(capsys, monkeypatch):
    from scan2d import bench
    monkeypatch.setattr(bench, "gradcheck", lambda *a: [dict(group="dx", max_rel_error=1.0,
                                                              max_abs_error_small=0.0, passed=False)])
    code, _, err = run(capsys, "gradcheck")
    assert code == 1 and "dx" in err


@pytest.mark.parametrize("variant", ["seq1d", "seq2d", "naive2d", "tiled2d"])
def test_scan_with_seed(tmp_path, capsys, variant):
    x = np.random.default_rng(0).standard_normal((6, 5))
    src, dst = tmp_path / "x.t2dm", tmp_path / "y.t2dm"
    write_tensor(x, src)
    code, [rec], _ = run(capsys, "scan", "--input", str(src), "--output", str(dst), "--variant", variant,
                         "--tile", "2", "--state-dim", "3", "--seed", "4")
    assert code == 0 and rec["bytes"] == dst.stat().st_size
    _, inputs, params = random_instance(6, 5, 3, 4)
    ref = selective_scan1d(x, inputs, params) if variant == "seq1d" else selective_scan2d(x, inputs, params).y
    assert np.allclose(read_tensor(dst).plane(), ref, rtol=1e-12, atol=1e-12)


def test_scan_with_params_file(tmp_path, capsys):
    x, inputs, params = random_instance(5, 7, 2, seed=9)
    write_tensor(x, tmp_path / "x.t2dm")
    write_scan_params(tmp_path / "p.t2dm", inputs, params)
    code, _, _ = run(capsys, "scan", "--input", str(tmp_path / "x.t2dm"), "--output", str(tmp_path / "y.t2dm"),
                     "--params", str(tmp_path / "p.t2dm"))
    assert code == 0
    want = selective_scan2d(x, inputs, params).y
    assert np.array_equal(read_tensor(tmp_path / "y.t2dm").plane(), want)


def test_scan_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.t2dm"
    bad.write_bytes(b"X2DM\x01\x01\x02\x00")
    code, _, err = run(capsys, "scan", "--input", str(bad), "--output", str(tmp_path / "y"))
    assert code == 2 and "magic" in err


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == 2
    assert main(["bench", "--variant", "tiled2d", "--bogus"]) == 2
    assert main(["discrepancy", "--width", "0", "--alpha", "0.5"]) == 2
    capsys.readouterr()


def test_env_threads(capsys, monkeypatch):
    monkeypatch.setenv("SCAN2D_THREADS", "nope")
    code, _, err = run(capsys, "discrepancy", "--width", "3", "--alpha", "0.5")
    assert code == 2


def test_pretty_output(capsys):
    assert main(["discrepancy", "--width", "4", "--alpha", "0.5", "--pretty"]) == 0
    out = capsys.readouterr().out
    assert "coefficient_1d" in out and "0.0625" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "scan2d", "discrepancy", "--width", "3", "--alpha", "0.5"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["coefficient_1d"] == 0.125
