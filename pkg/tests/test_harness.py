import numpy as np
import pytest

from nfseg import data as D
from nfseg.errors import ConfigurationError, DivergenceError, LoadError
from nfseg.harness import (
    ExperimentConfig,
    evaluate,
    evaluate_masks,
    load_checkpoint,
    load_dataset,
    model_from_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from nfseg.harness import training as T

TINY = dict(hidden=16, heads=4, channels=16, downsample=32, image_size=32, n_train=4,
            n_val=2, n_test=2, points=64, batch_size=2, max_epochs=2)


def tiny(**kw):
    return ExperimentConfig(**{**TINY, **kw})


@pytest.fixture(scope="module")
def trained():
    cfg = tiny()
    return cfg, load_dataset(cfg), train(cfg)


def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.points, cfg.embed_l, cfg.lr, cfg.batch_size) == (512, 4, 1e-4, 16)
    assert (cfg.hidden, cfg.channels, cfg.downsample) == (128, 128, 32)
    assert (cfg.n_train, cfg.n_val, cfg.n_test) == (200, 40, 40)
    assert cfg.early_stop_patience == 10 and cfg.deterministic
    full = ExperimentConfig.full_scale()
    assert (full.batch_size, full.hidden, full.channels, full.image_size) == (64, 512, 512, 256)
    assert full.decoder_config().blocks == 1
    attention = full.replace(strategy="cross_attention", code_source="tokens")
    assert attention.decoder_config().blocks == 2


def test_config_text_round_trip(tmp_path):
    cfg = tiny(strategy="film", code_source="local", lr=3e-4, augment=False, train_tiles="a,b")
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg
    path = tmp_path / "c.ini"
    cfg.save(path)
    assert ExperimentConfig.from_file(path) == cfg
    assert "[model]" in cfg.to_text() and "[train]" in cfg.to_text()


def test_config_overrides_and_errors():
    cfg = ExperimentConfig().override("image-size", "128").override("augment", "no")
    assert cfg.image_size == 128 and cfg.augment is False
    with pytest.raises(ConfigurationError):
        ExperimentConfig().override("nonsense", "1")
    with pytest.raises(ConfigurationError):
        ExperimentConfig().override("points", "many")
    with pytest.raises(ConfigurationError):
        ExperimentConfig(image_size=48)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(strategy="film", code_source="tokens")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_text("[model]\nwidth = 3\n")


def test_training_log_is_bit_identical(trained):
    cfg, _, first = trained
    second = train(cfg)
    assert first.log_text() == second.log_text()
    a, b = first.checkpoint.model_state, second.checkpoint.model_state
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_best_checkpoint_is_best_recorded(trained):
    _, _, result = trained
    vals = [r["val_iou"] for r in result.log if "val_iou" in r]
    assert len(vals) == 2
    assert result.checkpoint.best_val_iou == max(vals)


def test_checkpoint_round_trip_bit_exact(trained, tmp_path):
    cfg, data, result = trained
    before = evaluate(result.checkpoint, data.val)
    save_checkpoint(tmp_path / "m.ckpt", result.checkpoint)
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    after = evaluate(loaded, data.val)
    assert before.confusion.tobytes() == after.confusion.tobytes()
    assert before.aggregate_iou == after.aggregate_iou == result.checkpoint.best_val_iou
    assert loaded.config == cfg and loaded.step == result.checkpoint.step
    assert loaded.adam_t == result.checkpoint.adam_t
    assert set(loaded.adam_m) == set(result.checkpoint.adam_m)
    running = [k for k in loaded.model_state if k.endswith("running_var")]
    assert running


def test_checkpoint_load_errors(tmp_path):
    with pytest.raises(LoadError):
        load_checkpoint(tmp_path / "missing.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(LoadError):
        load_checkpoint(tmp_path / "junk.ckpt")


def test_zero_learning_rate_leaves_parameters(trained):
    cfg = tiny(lr=0.0, max_epochs=1)
    result = train(cfg)
    init = T.build_model(cfg).state_dict()
    final = result.model.state_dict()
    for name, value in init.items():
        if "running" not in name:
            assert value.tobytes() == final[name].tobytes(), name


def test_divergence_reports_step(monkeypatch):
    cfg = tiny(max_epochs=1)
    calls = {"n": 0}
    real = T.softmax_cross_entropy

    def poisoned(logits, labels):
        calls["n"] += 1
        loss = real(logits, labels)
        if calls["n"] == 2:
            loss.data = np.array(np.nan, dtype=loss.data.dtype)
        return loss

    monkeypatch.setattr(T, "softmax_cross_entropy", poisoned)
    with pytest.raises(DivergenceError) as err:
        train(cfg)
    assert err.value.step == 2


def test_empty_training_split():
    cfg = tiny()
    with pytest.raises(ConfigurationError):
        train(cfg, D.DatasetSplit())


def test_evaluate_ground_truth_replay():
    samples = [D.generate_synthetic(i, 32, 32) for i in range(3)]
    report = evaluate_masks([(s.mask, s.mask) for s in samples])
    assert report.aggregate_iou == 1.0 and report.mean_iou == 1.0


def test_evaluate_twice_identical_and_masks_shaped(trained):
    _, data, result = trained
    a = evaluate(result.checkpoint, data.test)
    b = evaluate(result.checkpoint, data.test)
    assert a.confusion.tobytes() == b.confusion.tobytes()
    model = model_from_checkpoint(result.checkpoint)
    for s in data.test:
        assert T.predict_mask(model, s.image).shape == s.mask.shape


def test_evaluate_rejects_incompatible_size(trained):
    _, _, result = trained
    with pytest.raises(ConfigurationError):
        predict(result.checkpoint, np.zeros((3, 40, 40), np.float32))


def test_predict_png_round_trip(trained, tmp_path):
    _, data, result = trained
    image = data.test[0].image
    mask, rgb = predict(result.checkpoint, image, tmp_path / "p.png")
    assert rgb.shape == (32, 32, 3)
    back = D.decode_label_colors(D._read_png(tmp_path / "p.png"))
    np.testing.assert_array_equal(back, mask)
    blue = D.encode_label_colors(np.ones((4, 4), np.uint8))
    assert (blue == (0, 0, 255)).all()


def test_overfit_mode_uses_one_sample():
    split = load_dataset(tiny(overfit=True))
    assert len(split.train) == len(split.val) == len(split.test) == 1
    assert split.train[0] is split.val[0]


def test_eval_interval_and_step_budget():
    result = train(tiny(max_epochs=0, max_steps=5, eval_interval=2))
    evals = [r["step"] for r in result.log if "val_iou" in r]
    assert evals == [2, 4, 5]


def test_early_stopping_patience(monkeypatch):
    scores = iter([0.5, 0.6, 0.6, 0.55, 0.59, 0.9, 0.9])
    real = T.evaluate_model

    def scripted(model, samples, seed=0):
        report = real(model, samples, seed)
        report.aggregate_iou = next(scores)
        return report

    monkeypatch.setattr(T, "evaluate_model", scripted)
    result = train(tiny(max_epochs=20, early_stop_patience=3))
    evals = [r["val_iou"] for r in result.log if "val_iou" in r]
    # a tie is not an improvement, so three evaluations after the 0.6 stop the run
    assert evals == [0.5, 0.6, 0.6, 0.55, 0.59]
    assert result.checkpoint.best_val_iou == 0.6 and result.checkpoint.epoch == 2


def test_tile_dataset_training(tmp_path):
    for sub in ("images", "labels"):
        (tmp_path / sub).mkdir()
    for i, name in enumerate(["t0", "t1", "t2", "t3"]):
        s = D.generate_synthetic(i, 48, 48)
        D.write_png(tmp_path / "images" / f"{name}.png", D.image_to_png_array(s.image))
        D.write_png(tmp_path / "labels" / f"{name}.png", D.encode_label_colors(s.mask))
    cfg = tiny(dataset=str(tmp_path), train_tiles="t0,t1", val_tiles="t2", test_tiles="t3",
               crops_per_epoch=4, eval_crops_per_tile=2, max_epochs=1)
    result = train(cfg)
    assert result.checkpoint is not None
    data = load_dataset(cfg)
    assert len(T.eval_samples(data.val, cfg)) == 2
