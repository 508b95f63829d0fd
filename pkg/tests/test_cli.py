import csv
import hashlib
import json

import pytest

from wactdma.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, SWEEP_HEADER, main

MINIMAL = "topology: {kind: grid, w: 2, h: 2}\nframes: 50\ntrace_path: trace.jsonl\nsummary_path: summary.json\n"


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_run_minimal_grid(tmp_path):
    assert main(["run", write(tmp_path, MINIMAL)]) == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["converged_at"] == 0
    assert summary["violations"] == []
    recs = [json.loads(x) for x in (tmp_path / "trace.jsonl").read_text().splitlines()]
    assert sum(r.get("kind") == "snapshot" for r in recs) == 51
    assert any(r.get("outcome") == "delivered" for r in recs)


def test_run_twice_is_byte_identical(tmp_path):
    cfg = write(tmp_path, "topology: {kind: grid, w: 3, h: 3}\nframes: 60\nseed: 4\n"
                          "perturbations: [{at_frame: 5, kind: corrupt_all}]\n")
    main(["run", cfg, "--trace", "a.jsonl", "--summary", "a.json"])
    main(["run", cfg, "--trace", "b.jsonl", "--summary", "b.json"])
    assert digest(tmp_path / "a.jsonl") == digest(tmp_path / "b.jsonl")
    assert digest(tmp_path / "a.json") == digest(tmp_path / "b.json")


def test_trace_has_no_wall_clock(tmp_path):
    main(["run", write(tmp_path, MINIMAL)])
    keys = set()
    for line in (tmp_path / "trace.jsonl").read_text().splitlines():
        keys |= set(json.loads(line))
    assert not keys & {"time", "timestamp", "wall", "elapsed", "host", "pid"}


def test_period_too_small_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, "topology: {kind: grid, w: 3, h: 3}\nprotocol: {period: 1}\n")
    assert main(["run", cfg]) == EXIT_CONFIG
    assert "period too small" in capsys.readouterr().err


def test_missing_config_exits_3(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_IO


def test_unwritable_trace_exits_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = write(tmp_path, "topology: {kind: path, n: 3}\nframes: 5\n")
    assert main(["run", cfg, "--trace", str(blocker / "sub" / "t.jsonl")]) == EXIT_IO


def test_summary_to_stdout(tmp_path, capsys):
    cfg = write(tmp_path, "topology: {kind: path, n: 3}\nframes: 5\n")
    assert main(["run", cfg]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["converged_at"] == 0


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.slow
def test_sweep_ten_seeds_corrupt_all(tmp_path):
    cfg = write(tmp_path, "topology: {kind: grid, w: 4, h: 4}\nframes: 300\n"
                          "perturbations: [{at_frame: 5, kind: corrupt_all}]\n")
    out = tmp_path / "sweep.csv"
    seeds = ",".join(str(s) for s in range(10))
    assert main(["sweep", cfg, "--vary", f"seed={seeds}", "-o", str(out), "--out-dir", str(tmp_path / "cells")]) == 0
    rows = read_rows(out)
    assert len(rows) == 10
    for row in rows:
        assert row["status"] == "ok"
        assert row["converged_at"] != ""
        assert row["violations"] == "0"
    assert len(list((tmp_path / "cells").glob("cell-*.json"))) == 10


def test_sweep_empty_grid(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    out = tmp_path / "empty.csv"
    assert main(["sweep", cfg, "--vary", "seed=", "-o", str(out)]) == EXIT_OK
    assert out.read_text().strip().split(",") == SWEEP_HEADER
    assert read_rows(out) == []


def test_sweep_marks_misconfigured_cell(tmp_path):
    cfg = write(tmp_path, "topology: {kind: grid, w: 3, h: 3}\nframes: 20\n")
    out = tmp_path / "s.csv"
    assert main(["sweep", cfg, "--vary", "protocol.period=1,17,20", "-o", str(out)]) == EXIT_OK
    rows = read_rows(out)
    assert [r["status"] for r in rows] == ["failed", "ok", "ok"]
    assert "period too small" in rows[0]["error"]
    assert rows[1]["converged_at"] == "0"


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = write(tmp_path, "topology: {kind: path, n: 5}\nframes: 30\n"
                          "perturbations: [{at_frame: 3, kind: corrupt_all}]\n")
    main(["sweep", cfg, "--vary", "seed=1,2,3", "-o", str(tmp_path / "a.csv")])
    main(["sweep", cfg, "--vary", "seed=1,2,3", "-o", str(tmp_path / "b.csv"), "-j", "2"])
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()


def test_verify_reproduces_run_summary(tmp_path, capsys):
    cfg = write(tmp_path, "topology: {kind: grid, w: 3, h: 3}\nframes: 80\nseed: 2\n"
                          "perturbations: [{at_frame: 5, kind: corrupt_all}]\n"
                          "trace_path: t.jsonl\nsummary_path: s.json\n")
    main(["run", cfg])
    assert main(["verify", str(tmp_path / "t.jsonl")]) == EXIT_OK
    verified = json.loads(capsys.readouterr().out)
    ran = json.loads((tmp_path / "s.json").read_text())
    for key in ("converged_at", "violations", "chi2", "max_recovery"):
        assert verified[key] == ran[key]


def test_verify_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert main(["verify", str(bad)]) == EXIT_CONFIG


def test_dump_topology(tmp_path, capsys):
    assert main(["dump-topology", write(tmp_path, "topology: {kind: path, n: 3}\n")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "edge 0 1" in out and "edge 1 2" in out
