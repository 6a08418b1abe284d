import json

import numpy as np
import pytest

from costtrack.benchmark.report import validate_report
from costtrack.cli import load_model, main, read_predictions
from costtrack.benchmark.dataset import DatasetError

MICRO = """\
preset = toy
model.visual.search_size = 64
model.visual.template_size = 32
model.visual.post_conv_count = 1
model.linguistic.max_words = 10
train.batch_size = 2
train.pairs_per_epoch = 4
train.epochs = 1
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "micro.cfg").write_text(MICRO)
    run = lambda *a: main(["-q", *map(str, a)])
    assert run("gen-synthetic", "--out", root / "data", "--seed", 4, "--sequences", 2, "--frames", 5,
               "--frame-size", "96x72", "--target-size", 8) == 0
    assert run("validate", "--data", root / "data") == 0
    assert run("train", "--data", root / "data", "--config", root / "micro.cfg", "--out", root / "m.npz",
               "--seed", 1) == 0
    assert run("track", "--data", root / "data", "--ckpt", root / "m.npz", "--out", root / "pred") == 0
    assert run("eval", "--data", root / "data", "--pred", root / "pred", "--out", root / "r.json",
               "--curves", root / "curves") == 0
    assert run("report", "--in", root / "r.json", "--attributes", "--out", root / "r.csv") == 0
    return root


def test_pipeline_outputs(pipeline):
    report = json.loads((pipeline / "r.json").read_text())
    validate_report(report)
    assert set(report["sequences"]) == {"generic-000", "generic-001"}
    rows = (pipeline / "r.csv").read_text().splitlines()
    assert len(rows) >= 2 and "auc" in rows[0]
    assert sorted(p.name for p in (pipeline / "pred").iterdir()) == ["generic-000.txt", "generic-001.txt"]
    assert any((pipeline / "curves").iterdir())


def test_checkpoint_carries_config_and_history(pipeline):
    model, cfg, meta = load_model(pipeline / "m.npz")
    assert cfg.preset == "toy" and cfg.model.visual.search_size == 64
    assert meta["seed"] == 1 and meta["history"][0]["steps"] == 2


def test_eval_rerun_identical_and_json_report(pipeline, capsys):
    assert main(["-q", "eval", "--data", str(pipeline / "data"), "--pred", str(pipeline / "pred"),
                 "--out", str(pipeline / "r2.json")]) == 0
    assert (pipeline / "r2.json").read_bytes() == (pipeline / "r.json").read_bytes()
    assert main(["-q", "report", "--in", str(pipeline / "r.json"), "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["auc"] == pytest.approx(json.loads((pipeline / "r.json").read_text())["overall"]["auc"])


def test_track_without_language(pipeline):
    assert main(["-q", "track", "--data", str(pipeline / "data"), "--ckpt", str(pipeline / "m.npz"),
                 "--out", str(pipeline / "pred_nolang"), "--no-language"]) == 0
    p = read_predictions(pipeline / "pred_nolang" / "generic-000.txt", 5)
    assert np.all(np.isfinite(p))


def test_errors_exit_nonzero(tmp_path):
    assert main(["-q", "validate", "--data", str(tmp_path / "nope")]) == 2
    (tmp_path / "bad.cfg").write_text("train.nonsense = 1\n")
    assert main(["-q", "train", "--data", str(tmp_path), "--config", str(tmp_path / "bad.cfg"),
                 "--out", str(tmp_path / "m.npz")]) == 2
    with pytest.raises(SystemExit):
        main(["gen-synthetic", "--out", str(tmp_path), "--seed", "1", "--sequences", "1", "--frame-size", "big"])


def test_read_predictions_errors(tmp_path):
    p = tmp_path / "p.txt"
    p.write_text("1,2,3,4\n")
    with pytest.raises(DatasetError, match="expected 2"):
        read_predictions(p, 2)
    p.write_text("1,2,3\n")
    with pytest.raises(DatasetError, match="x,y,w,h"):
        read_predictions(p, 1)
