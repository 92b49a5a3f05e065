import csv
import json

import pytest

from pinocde.cli import main

TINY = {
    "dataset": {"n_train": 16, "n_test": 4, "n_virtual": 4, "seed": 3},
    "arch": {"width": 4, "depth": 1, "k_modes": 4, "fc_width": 8},
    "train": {"epochs": 2, "row": "V2", "batch_size": 8},
    "pdem": {"n_sel": 8, "refine": 2, "provider": "oracle", "on_range": "widen"},
    "mc": {"n": 40, "provider": "oracle", "fixed_excitation": True, "chunk": 16},
    "compare": {"times": [1.0], "thresholds": [0.01]},
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    rd = root / "run"
    for cmd in ("gen-data", "en-weights", "train", "eval", "pdem", "mc", "compare"):
        assert main([cmd, "--config", str(cfg), "--run-dir", str(rd), "--jobs", "1"]) == 0, cmd
    return rd


def test_unknown_flag_exits_1_without_writing(tmp_path, capsys):
    assert main(["gen-data", "--run-dir", str(tmp_path / "x"), "--bogus"]) == 1
    assert not (tmp_path / "x").exists()
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_exits_1(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"dataset": {"n_trian": 3}}))
    assert main(["gen-data", "--config", str(cfg), "--run-dir", str(tmp_path / "x")]) == 1
    assert not (tmp_path / "x").exists()


def test_missing_requirements_exit_1(tmp_path):
    assert main(["export", "--run-dir", str(tmp_path / "x")]) == 1
    assert main(["recover", "--run-dir", str(tmp_path / "x")]) == 1
    assert main(["gen-data", "--run-dir", str(tmp_path / "x"), "--jobs", "0"]) == 1
    assert not (tmp_path / "x").exists()


def test_runtime_failure_exits_2(tmp_path):
    assert main(["train", "--run-dir", str(tmp_path / "empty")]) == 2


def test_gen_data_is_reproducible(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"n_train": 3, "n_test": 1, "n_virtual": 1}}))
    for name in ("a", "b"):
        assert main(["gen-data", "--config", str(cfg), "--run-dir", str(tmp_path / name), "--jobs", "2"]) == 0
    ha = json.loads((tmp_path / "a" / "dataset" / "manifest.json").read_text())["hash"]
    hb = json.loads((tmp_path / "b" / "dataset" / "manifest.json").read_text())["hash"]
    assert ha == hb


def test_snapshot_and_artifacts(run_dir):
    snap = json.loads((run_dir / "config.snapshot").read_text())
    assert snap["dataset"]["n_train"] == 16
    for d in ("dataset", "weights", "model", "reports"):
        assert (run_dir / d).is_dir()
    assert (run_dir / "reports" / "pdem" / "manifest.json").exists()


def test_eval_csv(run_dir):
    with open(run_dir / "reports" / "eval_test.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {"solutions", "d1", "d2", "average"} <= set(rows[0])
    assert float(rows[0]["d2"]) > 0


def test_snapshot_reused_without_config(run_dir):
    assert main(["eval", "--run-dir", str(run_dir), "--split", "train"]) == 0
    assert (run_dir / "reports" / "eval_train.csv").exists()


@pytest.mark.parametrize("kind", ["loss", "pdf", "dp", "overlay"])
def test_export_is_byte_identical(run_dir, kind):
    def snapshot():
        return {p: p.read_bytes() for p in (run_dir / "plots").rglob("*") if p.is_file()}

    assert main(["export", "--run-dir", str(run_dir), "--kind", kind, "--index", "0"]) == 0
    first = snapshot()
    assert any(p.suffix == ".png" for p in first) and any(p.suffix == ".csv" for p in first)
    assert main(["export", "--run-dir", str(run_dir), "--kind", kind, "--index", "0"]) == 0
    assert snapshot() == first
