import shutil

import numpy as np
import pytest

from mltpn import checkpoint
from mltpn.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from mltpn.config import dumps
from mltpn.data import FeatureSequence, read_dataset, write_features
from mltpn.detector import HEADER
from mltpn.selfcheck import TINY_CONFIG

SYNTH = """synth.num_videos = 6
synth.length = 64
synth.dim = 4
synth.max_duration = 10
synth.max_instances = 2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.cfg").write_text(SYNTH)
    (root / "model.cfg").write_text(dumps(TINY_CONFIG, "model"))
    assert main(["synth", "--spec", str(root / "synth.cfg"), "--out", str(root / "data")]) == EXIT_OK
    args = ["train", "--data", str(root / "data"), "--out", str(root / "run"), "--config", str(root / "model.cfg"),
            "--max-epochs", "2", "--batch-size", "4", "--stride", "16"]
    assert main(args) == EXIT_OK
    return root


def test_synth_writes_dataset_and_manifest(workspace):
    seqs, anns = read_dataset(workspace / "data")
    assert len(seqs) == 6 and all(s.features.shape == (64, 4) for s in seqs)
    assert any(a.instances for a in anns)
    manifest = (workspace / "data" / "manifest.txt").read_text()
    assert "manifest.command = synth" in manifest and "manifest.timestamp" in manifest
    assert "synth.num_videos = 6" in (workspace / "data" / "config.txt").read_text()


def test_synth_rejects_infeasible_spec(tmp_path):
    (tmp_path / "bad.cfg").write_text("synth.length = 20\nsynth.max_duration = 30\n")
    assert main(["synth", "--spec", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "d")]) == EXIT_DATA
    assert not (tmp_path / "d").exists()


def test_train_outputs(workspace):
    run = workspace / "run"
    for name in ("checkpoint.mltpn", "last.mltpn", "curves.txt", "state.txt", "config.txt", "manifest.txt"):
        assert (run / name).is_file(), name
    assert len((run / "curves.txt").read_text().splitlines()) == 3
    assert "train.batch_size = 4" in (run / "config.txt").read_text()


def test_train_resume_continues_epochs(workspace, tmp_path):
    run = tmp_path / "run"
    shutil.copytree(workspace / "run", run)
    args = ["train", "--data", str(workspace / "data"), "--out", str(run), "--max-epochs", "3", "--stride", "16",
            "--resume"]
    assert main(args) == EXIT_OK
    assert [ln.split("\t")[0] for ln in (run / "curves.txt").read_text().splitlines()[1:]] == ["1", "2", "3"]
    assert main(args) == EXIT_USAGE  # nothing left to train


@pytest.mark.parametrize("extra, code", [
    (["--data", "/nonexistent"], EXIT_USAGE),
    (["--val", "/nonexistent"], EXIT_USAGE),
    (["--val-fraction", "1.0"], EXIT_DATA),
    (["--stride", "30"], EXIT_USAGE),  # instances up to 10 snippets would straddle windows
])
def test_train_rejects_bad_input_without_writing(workspace, tmp_path, extra, code):
    args = ["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "r"),
            "--config", str(workspace / "model.cfg")] + extra
    assert main(args) == code
    assert not (tmp_path / "r").exists()


def test_train_rejects_feature_dim_mismatch(workspace, tmp_path):
    (tmp_path / "m.cfg").write_text(dumps(TINY_CONFIG, "model").replace("model.input_dim = 4", "model.input_dim = 5"))
    args = ["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "r"), "--config", str(tmp_path / "m.cfg")]
    assert main(args) == EXIT_DATA
    assert not (tmp_path / "r").exists()


def test_detect_and_eval(workspace, tmp_path):
    dets = tmp_path / "dets.tsv"
    assert main(["detect", "--checkpoint", str(workspace / "run" / "checkpoint.mltpn"), "--data",
                 str(workspace / "data"), "--out", str(dets), "--score-floor", "0"]) == EXIT_OK
    lines = dets.read_text().splitlines()
    assert lines[0] == HEADER and len(lines) > 1
    assert main(["eval", "--detections", str(dets), "--annotations", str(workspace / "data" / "annotations.tsv"),
                 "--out", str(tmp_path / "report"), "--thresholds", "0.5"]) == EXIT_OK
    kv = (tmp_path / "report.kv").read_text()
    assert "map.iou0.50 = " in kv and "map.average = " in kv
    assert (tmp_path / "report.txt").read_text().startswith("class")


def test_detect_on_empty_dataset_writes_header(workspace, tmp_path):
    (tmp_path / "empty" / "features").mkdir(parents=True)
    out = tmp_path / "dets.tsv"
    assert main(["detect", "--checkpoint", str(workspace / "run" / "checkpoint.mltpn"), "--data",
                 str(tmp_path / "empty"), "--out", str(out)]) == EXIT_OK
    assert out.read_text() == HEADER + "\n"


def test_detect_rejects_wrong_feature_dim(workspace, tmp_path):
    (tmp_path / "d" / "features").mkdir(parents=True)
    write_features(tmp_path / "d" / "features" / "x.mlft", FeatureSequence("x", np.zeros((40, 7))))
    assert main(["detect", "--checkpoint", str(workspace / "run" / "checkpoint.mltpn"), "--data",
                 str(tmp_path / "d"), "--out", str(tmp_path / "o.tsv")]) == EXIT_DATA
    assert not (tmp_path / "o.tsv").exists()


def test_eval_errors(workspace, tmp_path):
    ann = str(workspace / "data" / "annotations.tsv")
    (tmp_path / "bad.tsv").write_text("v\t1\t2\n")
    assert main(["eval", "--detections", str(tmp_path / "bad.tsv"), "--annotations", ann,
                 "--out", str(tmp_path / "r")]) == EXIT_DATA
    assert main(["eval", "--detections", str(tmp_path / "missing.tsv"), "--annotations", ann,
                 "--out", str(tmp_path / "r")]) == EXIT_USAGE
    assert main(["eval", "--detections", str(tmp_path / "bad.tsv"), "--annotations", ann,
                 "--out", str(tmp_path / "r"), "--thresholds", "0.7:0.3:0.1"]) == EXIT_USAGE
    assert not (tmp_path / "r.kv").exists()


def test_selfcheck(workspace, tmp_path, capsys):
    assert main(["selfcheck", "--checkpoint", str(workspace / "run" / "checkpoint.mltpn")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.strip().endswith("selfcheck passed")
    (tmp_path / "bad.mltpn").write_bytes(b"NOTMAGIC" + checkpoint.dumps({"w": np.ones(2)}))
    assert main(["selfcheck", "--checkpoint", str(tmp_path / "bad.mltpn")]) == EXIT_NUMERIC
    assert "FAIL  checkpoint" in capsys.readouterr().out


def test_usage_errors_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--detections", "x"])
    assert exc.value.code == EXIT_USAGE
