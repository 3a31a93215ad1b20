"""Command-line interface: exit codes, outputs, determinism."""

import os

import numpy as np
import pytest

from mdnet.cli import main
from mdnet.data import read_ppm, write_ppm

SLIM_MDN_MODEL = """
model:
  kind: mdn
  num_classes: 3
  input_size: 64
  seed: 0
  stem_channels: [2, 3, 4]
  down_channels: [4, 4, 5, 6, 6]
  fused_channels: 4
  head_channels: [4, 4, 4, 4, 4]
"""

MDN_QUICKSTART = SLIM_MDN_MODEL + """
data:
  kind: synthetic-detection
  n: 4
  seed: 0
  sign_size: [16, 40]
  max_signs: 1
train:
  epochs: 2
  batch_size: 2
  lr: 0.01
  seed: 0
"""

CRN_QUICKSTART = """
model:
  kind: crn
  num_classes: 3
  seed: 0
data:
  kind: synthetic-classification
  n: 6
  seed: 0
train:
  epochs: 2
  batch_size: 3
  lr: 0.01
  seed: 0
"""


def _run(*argv):
    return main(list(argv))


class TestSynth:
    def test_writes_tree(self, tmp_path):
        out = tmp_path / "ds"
        assert _run("synth", "--out", str(out), "--n", "3", "--seed", "1", "--size", "64") == 0
        images = sorted(os.listdir(out / "images"))
        assert images == ["scene_00000.ppm", "scene_00001.ppm", "scene_00002.ppm"]
        rows = (out / "annotations.csv").read_text().splitlines()
        assert rows[0] == "Filename;Xmin;Ymin;Xmax;Ymax;ClassId"
        assert len(rows) > 1

    def test_same_seed_identical_tree(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        _run("synth", "--out", str(a), "--n", "3", "--seed", "7", "--size", "64")
        _run("synth", "--out", str(b), "--n", "3", "--seed", "7", "--size", "64")
        assert (a / "annotations.csv").read_bytes() == (b / "annotations.csv").read_bytes()
        for name in os.listdir(a / "images"):
            assert (a / "images" / name).read_bytes() == (b / "images" / name).read_bytes()


class TestTrain:
    def test_classification_quickstart(self, tmp_path, capsys):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(CRN_QUICKSTART)
        out = tmp_path / "out"
        assert _run("train", str(cfg), "--out", str(out)) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "epoch;train_loss;eval_accuracy"
        assert len(lines) == 1 + 2  # header + one row per epoch
        assert (out / "model.ckpt").exists()

    def test_detection_quickstart(self, tmp_path):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(MDN_QUICKSTART)
        out = tmp_path / "out"
        assert _run("train", str(cfg), "--out", str(out)) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "epoch;train_loss;conf_loss;loc_loss;map"
        assert len(lines) == 3

    def test_missing_dataset_path_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(
            "model:\n  kind: crn\ndata:\n  kind: classification\n  root: /nonexistent/nowhere\n"
        )
        assert _run("train", str(cfg), "--out", str(tmp_path / "o")) == 2

    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("model:\n  kind: crn\n  wat: 1\ndata:\n  kind: synthetic-classification\n")
        assert _run("train", str(cfg), "--out", str(tmp_path / "o")) == 2

    def test_yaml_parse_error_exits_2(self, tmp_path):
        cfg = tmp_path / "broken.yaml"
        cfg.write_text("model: [unclosed\n")
        assert _run("train", str(cfg), "--out", str(tmp_path / "o")) == 2

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(CRN_QUICKSTART)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert _run("train", str(cfg), "--out", str(out1)) == 0
        assert _run("train", str(cfg), "--out", str(out2)) == 0
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
        assert (out1 / "model.ckpt").read_bytes() == (out2 / "model.ckpt").read_bytes()


@pytest.fixture(scope="module")
def trained_detector(tmp_path_factory):
    """One slim detector checkpoint plus a tiny synthetic dataset tree."""
    root = tmp_path_factory.mktemp("cli_detector")
    cfg = root / "run.yaml"
    cfg.write_text(MDN_QUICKSTART)
    out = root / "out"
    assert main(["train", str(cfg), "--out", str(out)]) == 0
    data = root / "data"
    assert main(["synth", "--out", str(data), "--n", "3", "--seed", "5", "--size", "64"]) == 0
    return out / "model.ckpt", data


class TestEvalAndDetect:
    def test_eval_prints_metrics(self, trained_detector, capsys):
        ckpt, data = trained_detector
        assert _run("eval", str(ckpt), "--data", str(data)) == 0
        out = capsys.readouterr().out
        assert "mAP;" in out

    def test_eval_missing_data_exits_2(self, trained_detector):
        ckpt, _ = trained_detector
        assert _run("eval", str(ckpt), "--data", "/nonexistent") == 2

    def test_corrupt_checkpoint_exits_4(self, trained_detector, tmp_path):
        _, data = trained_detector
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"#params-archive v1\n#blob 0\n")
        assert _run("eval", str(bad), "--data", str(data)) == 4

    def test_detect_writes_rows_and_render(self, trained_detector, tmp_path, capsys):
        ckpt, data = trained_detector
        image = next(iter(sorted((data / "images").glob("*.ppm"))))
        out_file = tmp_path / "dets.csv"
        render = tmp_path / "boxes.ppm"
        code = _run(
            "detect", str(ckpt), str(image),
            "--t", "0.05", "--out", str(out_file), "--render", str(render),
        )
        assert code == 0
        assert render.exists()
        rendered = read_ppm(render)
        assert rendered.shape == (3, 64, 64)
        for line in out_file.read_text().splitlines():
            parts = line.split(";")
            assert len(parts) == 7

    def test_detect_threshold_above_one_gives_empty_output(self, trained_detector, tmp_path):
        ckpt, data = trained_detector
        image = next(iter(sorted((data / "images").glob("*.ppm"))))
        out_file = tmp_path / "none.csv"
        assert _run("detect", str(ckpt), str(image), "--t", "1.01", "--out", str(out_file)) == 0
        assert out_file.read_text() == ""

    def test_detect_unreadable_image_exits_2(self, trained_detector, tmp_path):
        ckpt, _ = trained_detector
        assert _run("detect", str(ckpt), str(tmp_path / "missing.ppm")) == 2

    def test_detect_on_crn_checkpoint_exits_2(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(CRN_QUICKSTART)
        out = tmp_path / "out"
        assert _run("train", str(cfg), "--out", str(out)) == 0
        img = tmp_path / "img.ppm"
        write_ppm(img, np.zeros((3, 32, 32), dtype=np.float32))
        assert _run("detect", str(out / "model.ckpt"), str(img)) == 2
