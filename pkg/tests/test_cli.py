import json
import subprocess
import sys

import pytest

from riskgraph.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["synth", "--n", "120", "--flight-hubs", "8", "--timestamps", "2", "--seed", "1",
                 "--out-dir", str(root), "--quiet"]) == 0
    return root


def train_config(dataset, tmp_path, **extra):
    cfg = {"nodes": str(dataset / "nodes.csv"), "edges": str(dataset / "edges.csv"), "mode": "HA",
           "lr": 0.01, "max_epoch": 30, "hidden": 16, **extra}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_synth_writes_dataset(dataset):
    assert (dataset / "nodes.csv").exists() and (dataset / "edges.csv").exists()
    assert len(list((dataset / "timeseries").glob("t_*.csv"))) == 2
    meta = json.loads((dataset / "run_meta.json").read_text())
    assert meta["command"] == "synth" and meta["seed"] == 1 and "versions" in meta


def test_motifs(dataset, tmp_path):
    out = tmp_path / "nmd.csv"
    assert main(["motifs", "--nodes", str(dataset / "nodes.csv"), "--edges", str(dataset / "edges.csv"),
                 "--out", str(out), "--out-dir", str(tmp_path), "--quiet"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "node_id,mt31,mt32,mt41,mt42,mt43"
    assert len(lines) == 121
    assert (tmp_path / "run_meta.json").exists()


def test_motif_significance(dataset, tmp_path):
    assert main(["motifs", "--nodes", str(dataset / "nodes.csv"), "--edges", str(dataset / "edges.csv"),
                 "--significance", "5", "--out-dir", str(tmp_path), "--quiet"]) == 0
    reports = json.loads((tmp_path / "significance.json").read_text())
    assert [r["motif"] for r in reports] == ["MT31", "MT32", "MT41", "MT42", "MT43"]


def test_featurize(dataset, tmp_path):
    assert main(["featurize", "--nodes", str(dataset / "nodes.csv"), "--edges", str(dataset / "edges.csv"),
                 "--out-dir", str(tmp_path), "--quiet"]) == 0
    for name in ("scheme.json", "split.csv", "sft.csv", "aft.csv"):
        assert (tmp_path / name).exists()
    again = tmp_path / "again"
    assert main(["featurize", "--nodes", str(dataset / "nodes.csv"), "--edges", str(dataset / "edges.csv"),
                 "--scheme", str(tmp_path / "scheme.json"), "--split", str(tmp_path / "split.csv"),
                 "--out-dir", str(again), "--quiet"]) == 0
    assert (again / "aft.csv").read_text() == (tmp_path / "aft.csv").read_text()


def test_train_evaluate_predict(dataset, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--config", str(train_config(dataset, tmp_path)), "--out-dir", str(run), "--quiet"]) == 0
    for name in ("history.csv", "metrics.json", "checkpoint.json", "embeddings.csv", "split.csv", "run_meta.json"):
        assert (run / name).exists()
    metrics = json.loads((run / "metrics.json").read_text())
    assert 0 <= metrics["test"]["accuracy"] <= 1
    assert metrics["test"]["iterations_to_converge"] >= 1

    ev = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(run / "checkpoint.json"), "--split", str(run / "split.csv"),
                 "--out-dir", str(ev), "--quiet"]) == 0
    assert json.loads((ev / "metrics.json").read_text())["accuracy"] == metrics["test"]["accuracy"]

    pr = tmp_path / "pred"
    assert main(["predict", "--checkpoint", str(run / "checkpoint.json"), "--out-dir", str(pr), "--quiet"]) == 0
    rows = (pr / "predictions.csv").read_text().splitlines()
    assert rows[0].startswith("node_id,label,p_risk_free")
    assert len(rows) == 121


def test_train_dynamic(dataset, tmp_path):
    cfg = train_config(dataset, tmp_path, dynamic=True, timeseries=str(dataset / "timeseries"), mode="CO")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "run"), "--quiet"]) == 0


def test_train_grid(dataset, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"mode": ["GCN", "SU"]}))
    assert main(["train", "--config", str(train_config(dataset, tmp_path, max_epoch=5)), "--grid", str(grid),
                 "--out-dir", str(tmp_path / "g"), "--quiet"]) == 0
    summary = json.loads((tmp_path / "g" / "grid.json").read_text())
    assert [r["config"]["mode"] for r in summary] == ["GCN", "SU"]


def test_gradcheck_exit_code(tmp_path, capsys):
    assert main(["gradcheck", "--seed", "7", "--out-dir", str(tmp_path)]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_validation_error_is_one_json_line(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nodes": "missing.csv", "edges": "missing.csv"}))
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path), "--quiet"]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    payload = json.loads(err[0])
    assert payload["command"] == "train" and payload["error"] == "FileNotFoundError"
    assert not (tmp_path / "run_meta.json").exists()


def test_bad_config_value(dataset, tmp_path, capsys):
    assert main(["train", "--config", str(train_config(dataset, tmp_path, lr=-1)), "--out-dir", str(tmp_path)]) == 1
    assert "lr must be positive" in json.loads(capsys.readouterr().err)["message"]


def test_unknown_flag_exits_2():
    proc = subprocess.run([sys.executable, "-m", "riskgraph.cli", "train", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage" in proc.stderr
