import json
import subprocess
import sys
import time

import numpy as np
import pytest

from xorslp.cli import main
from xorslp.codec import encode_slp, CodecParams
from xorslp.slp import dumps


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "file.bin"
    path.write_bytes(np.random.default_rng(0).integers(0, 256, 50_001, dtype=np.uint8).tobytes())
    return path


def _shards(path):
    return sorted(path.parent.glob(f"{path.stem}.shard*"), key=lambda p: int(p.name.split("shard")[1]))


def test_encode_decode_roundtrip(data_file, tmp_path, capsys):
    assert main(["encode", "--n", "10", "--p", "4", str(data_file)]) == 0
    shards = _shards(data_file)
    assert [p.name for p in shards] == [f"file.shard{k}" for k in range(14)]
    first = [p.read_bytes() for p in shards]
    assert main(["encode", "--n", "10", "--p", "4", str(data_file)]) == 0
    assert [p.read_bytes() for p in shards] == first  # deterministic

    out = tmp_path / "all.bin"
    assert main(["decode", *map(str, shards), "-o", str(out)]) == 0
    assert out.read_bytes() == data_file.read_bytes()

    rng = np.random.default_rng(1)
    for _ in range(5):
        keep = sorted(rng.choice(14, 10, replace=False))
        out = tmp_path / "some.bin"
        assert main(["decode", *(str(shards[k]) for k in keep), "-o", str(out)]) == 0
        assert out.read_bytes() == data_file.read_bytes()

    capsys.readouterr()
    assert main(["decode", *map(str, shards[:9]), "-o", str(out)]) == 2
    assert "unrecoverable" in capsys.readouterr().err


def test_decode_rejects_mismatched_headers(data_file, tmp_path, capsys):
    assert main(["encode", "--n", "4", "--p", "2", "--block-size", "64", str(data_file)]) == 0
    shards = _shards(data_file)
    other = tmp_path / "other.bin"
    other.write_bytes(b"z" * 10)
    assert main(["encode", "--n", "4", "--p", "2", "--block-size", "64", str(other)]) == 0
    mixed = [str(p) for p in shards[:3]] + [str(_shards(other)[3])]
    assert main(["decode", *mixed, "-o", str(tmp_path / "x")]) == 2
    assert "disagree" in capsys.readouterr().err
    junk = tmp_path / "junk.shard0"
    junk.write_bytes(b"0" * 40)
    assert main(["decode", str(junk), "-o", str(tmp_path / "x")]) == 2


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["analyze", "--pipeline", "xorrepair,unroll"]) == 2
    assert main(["encode", "/nonexistent/file"]) == 2
    assert main(["--help"]) == 0


def test_analyze_table(capsys):
    assert main(["analyze", "--capacity", "64"]) == 0
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert lines[0] == "RS(10,4) encode; pipeline xorrepair,fuse,dfs"
    assert lines[1].split() == ["stage", "#xor", "#ops", "#M", "NVar", "CCap", "IOcost(64)"]
    rows = {l.split()[0]: l.split()[1:] for l in lines[3:]}
    assert list(rows) == ["input", "xorrepair", "fuse", "dfs"]
    assert rows["input"][:5] == ["755", "755", "2265", "32", "92"]
    # byte-stable output
    assert main(["analyze", "--capacity", "64"]) == 0
    assert capsys.readouterr().out == out


def test_analyze_decode_and_json(capsys):
    assert main(["analyze", "--pattern", "2,4,5,6", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert [s["stage"] for s in rep["stages"]] == ["input", "xorrepair", "fuse", "dfs"]
    assert rep["stages"][0]["xor"] == 1368 and rep["stages"][0]["mem"] == 4104
    assert main(["analyze", "--pattern", "1,2,3,4,5"]) == 2


def test_analyze_noop_pipeline(capsys):
    assert main(["analyze", "--n", "8", "--p", "2", "--pipeline", "none"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [l.split()[0] for l in lines[3:]] == ["input"]


def test_analyze_program_file(tmp_path, capsys):
    path = tmp_path / "prog.slp"
    path.write_text(dumps(encode_slp(CodecParams(4, 2))))
    assert main(["analyze", "--slp", str(path), "--pipeline", "repair,fuse,greedy", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert [s["stage"] for s in rep["stages"]] == ["input", "repair", "fuse", "greedy"]
    path.write_text("v1 = c0 +\n")
    assert main(["analyze", "--slp", str(path)]) == 2


def test_bench(capsys):
    args = ["bench", "--n", "4", "--p", "2", "--size", "65536", "--reps", "1",
            "--block-sizes", "64,256,1024"]
    assert main(args) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [l.split()[0] for l in lines[3:]] == ["64", "256", "1024"]
    assert main(args + ["--json"]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert len(rows) == 3 and all(r["none"] > 0 for r in rows)


def test_selftest_and_fault_injection(capsys):
    t = time.perf_counter()
    assert main(["selftest"]) == 0
    assert time.perf_counter() - t < 120
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
    assert main(["selftest", "--suites", "field", "--inject-fault", "field"]) == 2
    assert "FAIL field" in capsys.readouterr().out
    assert main(["selftest", "--suites", "bogus"]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "xorslp", "analyze", "--n", "4", "--p", "2",
                          "--pipeline", "none"], capture_output=True, text=True)
    assert res.returncode == 0 and "RS(4,2) encode" in res.stdout
