import json
import subprocess
import sys

import pytest

from echomi.cli import run

GRID = {"grids": {"rf": {"n_trees": [3], "max_features": ["sqrt"]}, "knn": {"k": [3]}},
        "synth": {"n_frames": 7}}


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(GRID))
    assert run(["synth", "--n-healthy", "8", "--n-mi", "8", "--seed", "2", "--noise", "0.02",
                "--out", str(root / "data"), "--config", str(cfg)]) == 0
    return root, cfg


def test_synth_writes_manifest(cohort):
    root, _ = cohort
    lines = (root / "data" / "manifest.tsv").read_text().strip().splitlines()
    assert len([ln for ln in lines if not ln.startswith("#")]) >= 32
    info = json.loads((root / "data" / "run.json").read_text())
    assert info["status"] == "ok" and info["seed"] == 2 and info["versions"]["numpy"]


def test_evaluate_happy_path_and_idempotent(cohort):
    root, cfg = cohort
    out = root / "eval"
    argv = ["evaluate", "--manifest", str(root / "data" / "manifest.tsv"), "--mode",
            "multiview_concat", "--model", "rf", "--out", str(out), "--config", str(cfg)]
    assert run(argv) == 0
    report = json.loads((out / "metrics.json").read_text())
    first = {p: (out / p).read_bytes() for p in ("metrics.json", "metrics.csv", "features.csv",
                                                 "selected_params.json", "f1_chart.svg")}
    assert report and (out / "predictions" / "multiview_concat_RF.csv").is_file()
    assert run(argv) == 0
    assert first == {p: (out / p).read_bytes() for p in first}


def test_stages_chain(cohort):
    root, cfg = cohort
    manifest = str(root / "data" / "manifest.tsv")
    out = root / "stages"
    base = ["--manifest", manifest, "--out", str(out), "--config", str(cfg)]
    assert run(["segment", "--no-overlays"] + base) == 0
    assert len(list((out / "boundaries").glob("*.json"))) == 32
    assert run(["trace"] + base) == 0
    assert list((out / "traces").glob("*.svg"))
    assert run(["features"] + base) == 0
    header = (out / "features.csv").read_text().splitlines()[0]
    assert "subject" in header
    assert run(["train", "--features", str(out / "features.csv"), "--mode", "a4c", "--model",
                "knn", "--out", str(out), "--config", str(cfg)]) == 0
    assert (out / "models" / "A4C_KNN.json").is_file()


def test_fuse(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("subject,pred,truth\ns1,1,1\ns2,0,0\ns3,0,0\n")
    b.write_text("subject,pred,truth\ns1,0,0\ns2,0,1\ns3,1,0\n")
    assert run(["fuse", "--a4c", str(a), "--a2c", str(b), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "fused_report.json").read_text())
    assert rep["confusion"] == {"tp": 1, "fn": 1, "tn": 0, "fp": 1}


def test_missing_manifest(tmp_path, capsys):
    missing = tmp_path / "nope.tsv"
    code = run(["evaluate", "--manifest", str(missing), "--out", str(tmp_path / "o")])
    assert code == 1
    assert str(missing) in capsys.readouterr().err
    assert json.loads((tmp_path / "o" / "run.json").read_text())["exit_code"] == 1


def test_missing_features(tmp_path, capsys):
    assert run(["train", "--features", str(tmp_path / "f.csv"), "--out", str(tmp_path)]) == 1
    assert "f.csv" in capsys.readouterr().err


def test_unknown_flag_rejected(tmp_path):
    assert run(["complexity", "--bogus", "--out", str(tmp_path)]) == 1


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"learning": 1}')
    assert run(["complexity", "--layers", "1", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_complexity_unit_case(tmp_path, capsys):
    assert run(["complexity", "--layers", "1", "--out", str(tmp_path)]) == 0
    assert "C = 7" in capsys.readouterr().out
    assert json.loads((tmp_path / "complexity.json").read_text())["C"] == 7


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "echomi", "complexity", "--layers", "1",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and "C = 7" in proc.stdout
