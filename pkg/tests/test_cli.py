import json
import subprocess
import sys

import pytest

from mixplatoon import cli
from mixplatoon import experiments as ex
from mixplatoon.errors import NumericAbort


def run(*args):
    return cli.main([str(a) for a in args])


def test_decompose_prints_modules(tmp_path, capsys):
    assert run("decompose", "--out", tmp_path, "--topology", "1,0,0,0,0,0,0,0") == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["M_5: leader 0 -> CAVs [1, 2, 3, 4, 5]", "M_2: leader 5 -> CAVs [6, 7]"]
    doc = json.loads((tmp_path / "decompose.json").read_text())
    assert doc["topology"] == "1,0,0,0,0,0,0,0"


def test_simulate_all_hdv_without_checkpoints(tmp_path):
    assert run("simulate", "--out", tmp_path, "--topology", "1,1,1,1") == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,vehicle_id,x,v,a"
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["vehicles"]) == 4


def test_missing_checkpoints_exit_2(tmp_path, capsys):
    assert run("simulate", "--out", tmp_path) == 2
    assert "missing checkpoints" in capsys.readouterr().err


def test_bad_config_exit_2(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"unknown": 1}')
    assert run("simulate", path, "--out", tmp_path) == 2
    assert run("sweep", "--out", tmp_path, "--rates", "0,x") == 2
    assert run("combos", "--out", tmp_path, "--rate", "50", "--checkpoints", tmp_path) == 2


def test_numeric_abort_exit_3(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise NumericAbort("module 2: non-finite loss")
    monkeypatch.setattr(ex, "run_training", boom)
    assert run("train", "--out", tmp_path) == 3
    assert "module 2" in capsys.readouterr().err


def test_pipeline_end_to_end(tiny_config, tmp_path, capsys):
    out = tmp_path / "o"
    assert run("train", tiny_config, "--out", out) == 0
    ckpt = out / "checkpoints"
    assert sorted(p.name for p in ckpt.iterdir()) == [
        "m1.json", "m1_undertrained.json", "m2.json", "m3.json", "m4.json", "m5.json"]
    counts = {k: len((out / "logs" / f"train_m{k}.jsonl").read_text().splitlines()) for k in range(1, 6)}
    assert counts == {1: 4, 2: 2, 3: 2, 4: 2, 5: 2}

    assert run("sweep", tiny_config, "--out", out) == 0
    sweep = json.loads((out / "sweep.json").read_text())
    assert [r["name"] for r in sweep["rows"]] == ["0%", "40%", "100%"]
    assert sweep["rows"][0]["travel_improvement_pct"] == 0.0
    assert sweep["rows"][0]["energy_improvement_pct"] == 0.0

    assert run("combos", tiny_config, "--out", out) == 0
    combos = json.loads((out / "combos.json").read_text())
    assert [r["name"] for r in combos["rows"]] == ["random", "specific", "cav_first", "hdv_first"]
    assert combos["rows"][1]["topology"] == "1,1,0,1,0,1,0,1,0,1,0,1,0,1,0,1"

    assert run("simulate", tiny_config, "--out", out, "--topology", "1,0,1,0,0") == 0
    capsys.readouterr()
    assert run("report", tiny_config, "--out", tmp_path / "r", "--log", out / "trajectory.csv",
               "--topology", "1,0,1,0,0") == 0
    assert json.loads(capsys.readouterr().out) == json.loads((out / "report.json").read_text())


def test_training_resumes_after_last_module(tiny_config, tmp_path):
    out = tmp_path / "o"
    assert run("train", tiny_config, "--out", out, "--modules", "1,2") == 0
    before = (out / "checkpoints" / "m2.json").read_bytes()
    assert run("train", tiny_config, "--out", out) == 0
    summary = json.loads((out / "training.json").read_text())
    assert summary["skipped"] == [1, 2] and summary["trained"] == [3, 4, 5]
    assert (out / "checkpoints" / "m2.json").read_bytes() == before


def test_module_needs_undertrained_checkpoint(tiny_config, tmp_path):
    assert run("train", tiny_config, "--out", tmp_path, "--modules", "3") == 2


def test_seed_flag_changes_random_topologies(tmp_path):
    assert run("sweep", "--out", tmp_path / "a", "--rates", "0,40", "--seed", "1",
               "--checkpoints", tmp_path) in (0, 2)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mixplatoon", "decompose", "--out", str(tmp_path),
                          "--topology", "1,0,1"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.strip() == "M_1: leader 0 -> CAVs [1]\nM_1: leader 2 -> CAVs [3]".strip() or \
        res.stdout.splitlines()[0].startswith("M_1")
