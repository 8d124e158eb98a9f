import subprocess
import sys

import numpy as np
import pytest

from nfseg import data as D
from nfseg.harness import ExperimentConfig, load_checkpoint
from nfseg.harness.cli import main
from nfseg.metrics import CSV_HEADER

TINY_FLAGS = ["--hidden", "16", "--heads", "4", "--channels", "16", "--image-size", "32",
              "--n-train", "4", "--n-val", "2", "--n-test", "2", "--points", "64",
              "--batch-size", "2", "--max-epochs", "1"]


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "model.ckpt"
    assert main(["train", "--out", str(out)] + TINY_FLAGS) == 0
    return out


def test_generate_data(tmp_path, capsys):
    assert main(["generate-data", "--seed", "2", "--count", "3", "--size", "32",
                 "--out", str(tmp_path)]) == 0
    split = D.load_tile_dataset(tmp_path)
    assert len(split.train) == 3
    tile = split.train[0].load()
    ref = D.generate_synthetic(200000, 32, 32)
    np.testing.assert_array_equal(tile.mask, ref.mask)


def test_train_writes_checkpoint_and_log(ckpt, capsys):
    loaded = load_checkpoint(ckpt)
    assert loaded.config.hidden == 16 and loaded.config.image_size == 32
    assert "val_iou" in open(str(ckpt) + ".log").read()


def test_train_reads_config_file(tmp_path):
    cfg = ExperimentConfig(hidden=16, heads=4, channels=16, image_size=32, n_train=2, n_val=1,
                           n_test=1, points=16, batch_size=2, max_epochs=1, strategy="film",
                           code_source="local")
    cfg.save(tmp_path / "c.ini")
    out = tmp_path / "m.ckpt"
    assert main(["train", "--config", str(tmp_path / "c.ini"), "--out", str(out),
                 "--seed", "4"]) == 0
    loaded = load_checkpoint(out)
    assert loaded.config == cfg.replace(seed=4)


def test_evaluate_prints_csv(ckpt, tmp_path, capsys):
    assert main(["evaluate", "--ckpt", str(ckpt), "--split", "val",
                 "--csv", str(tmp_path / "m.csv")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split(",") == CSV_HEADER
    assert float(dict(zip(CSV_HEADER, out[1].split(",")))["aggregate_iou"]) == pytest.approx(
        load_checkpoint(ckpt).best_val_iou, abs=1e-6)
    assert open(tmp_path / "m.csv").read().splitlines()[0] == out[0]
    assert main(["evaluate", "--ckpt", str(ckpt), "--table"]) == 0
    assert "aggregate" in capsys.readouterr().out


def test_predict_writes_png(ckpt, tmp_path):
    sample = D.generate_synthetic(9, 32, 32)
    D.write_png(tmp_path / "in.png", D.image_to_png_array(sample.image))
    assert main(["predict", "--ckpt", str(ckpt), "--image", str(tmp_path / "in.png"),
                 "--out", str(tmp_path / "out.png")]) == 0
    mask = D.decode_label_colors(D._read_png(tmp_path / "out.png"))
    assert mask.shape == (32, 32)


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["evaluate", "--ckpt", str(tmp_path / "missing.ckpt")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["train", "--out", str(tmp_path / "x"), "--image-size", "48"]) == 2
    with pytest.raises(SystemExit):
        main(["train", "--out", str(tmp_path / "x"), "--hidden"])
    with pytest.raises(SystemExit):
        main(["gradcheck", "--bogus", "1"])


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--trials", "2"]) == 0
    out = capsys.readouterr().out
    assert "multi_head_attention" in out and "decoder cross_attention/tokens" in out
    assert "FAIL" not in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "nfseg", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for cmd in ("generate-data", "train", "evaluate", "predict", "compare", "gradcheck"):
        assert cmd in res.stdout
