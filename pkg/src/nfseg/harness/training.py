"""Training loop, dense evaluation and prediction."""

from __future__ import annotations

import contextlib
import functools
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import data as D
from ..decoders import NeuralFieldModel, count_parameters
from ..diffcore import Adam, no_grad, softmax_cross_entropy
from ..diffcore.tensor import Tensor
from ..errors import ConfigurationError, DivergenceError
from ..metrics import MetricsReport, confusion_matrix
from .checkpoint import Checkpoint
from .config import ExperimentConfig, split_names

log = logging.getLogger(__name__)

# points decoded per forward pass during dense inference
DENSE_CHUNK = 8192

# independent random streams derived from the run seed
_INIT, _ORDER, _AUGMENT, _POINTS, _CROPS = range(5)


def _rng(seed, stream):
    return np.random.default_rng([seed, stream])


def deterministic_context(config):
    """Single-threaded BLAS for reproducible reduction order, when requested."""
    if not config.deterministic:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def build_model(config):
    return NeuralFieldModel(config.decoder_config(), config.encoder_config(),
                            seed=int(_rng(config.seed, _INIT).integers(2**31)))


@functools.lru_cache(maxsize=8)
def _cached_tile(ref):
    return ref.load().validate()


def _materialize(item):
    return _cached_tile(item) if isinstance(item, D.TileRef) else item


def load_dataset(config):
    """Dataset split described by ``config`` (synthetic scenes or a tile directory)."""
    if config.overfit:
        sample = D.generate_synthetic(config.data_seed, config.image_size, config.image_size)
        return D.DatasetSplit([sample], [sample], [sample])
    if config.dataset == "synthetic":
        return D.synthetic_split(config.data_seed, config.image_size,
                                 config.n_train, config.n_val, config.n_test)
    return D.load_tile_dataset(config.dataset,
                               split_names(config.train_tiles) or None,
                               split_names(config.val_tiles) or None,
                               split_names(config.test_tiles) or None)


def _fit_size(sample, size, rng):
    if sample.mask.shape == (size, size):
        return sample
    return D.random_crop(sample, size, rng)


def eval_samples(items, config):
    """Fixed evaluation crops: whole samples, or seeded crops from large tiles."""
    out = []
    for idx, item in enumerate(items):
        sample = _materialize(item)
        if sample.mask.shape == (config.image_size, config.image_size):
            out.append(sample)
            continue
        rng = _rng(config.data_seed, 1000 + idx)
        out += [D.random_crop(sample, config.image_size, rng)
                for _ in range(config.eval_crops_per_tile)]
    return out


class _TrainStream:
    """Yields training samples for each epoch."""

    def __init__(self, items, config):
        self.items, self.config = list(items), config
        self.order_rng = _rng(config.seed, _ORDER)
        self.crop_rng = _rng(config.seed, _CROPS)
        self.tiles = any(isinstance(i, D.TileRef) for i in self.items)
        self.fixed = None

    def _draw(self):
        size = self.config.image_size
        if self.tiles:
            picks = self.crop_rng.integers(0, len(self.items), self.config.crops_per_epoch)
            return [D.random_crop(_materialize(self.items[i]), size, self.crop_rng)
                    for i in picks]
        return [_fit_size(s, size, self.crop_rng) for s in self.items]

    def epoch(self):
        if self.config.recrop or self.fixed is None:
            samples = self._draw()
            if not self.config.recrop:
                self.fixed = samples
        else:
            samples = self.fixed
        order = self.order_rng.permutation(len(samples))
        return [samples[i] for i in order]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list = field(default_factory=list)
    model: NeuralFieldModel = None

    def log_text(self):
        lines = []
        for entry in self.log:
            lines.append(" ".join(f"{k}={v!r}" for k, v in entry.items()))
        return "\n".join(lines) + "\n"


def make_batch(samples, config, aug_rng, point_rng):
    images, coords, labels = [], [], []
    for s in samples:
        if config.augment and not config.overfit:
            s = D.flip_augment(s, aug_rng)
        pts = D.sample_points_train(s.mask, config.points, point_rng,
                                    replace=config.sample_with_replacement)
        images.append(s.image)
        coords.append(pts.coords)
        labels.append(pts.labels)
    return np.stack(images).astype(np.float32), np.stack(coords), np.stack(labels)


def train_step(model, optimizer, images, coords, labels, step=0):
    model.train()
    logits = model(images, coords)
    B, S, K = logits.shape
    loss = softmax_cross_entropy(logits.reshape(B * S, K), labels.reshape(-1))
    value = float(loss.data)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss at step {step}", where="loss", step=step)
    optimizer.zero_grad()
    loss.backward()
    try:
        optimizer.step()
    except DivergenceError as exc:
        exc.step = step
        raise
    return value


def snapshot(model, optimizer, config, epoch, step, best):
    st = optimizer.state
    return Checkpoint(config=config, model_state=model.state_dict(),
                      adam_m={k: v.copy() for k, v in st.m.items()},
                      adam_v={k: v.copy() for k, v in st.v.items()},
                      adam_t=st.t, epoch=epoch, step=step, best_val_iou=best)


def train(config, dataset=None, on_eval=None):
    """Train encoder and decoder jointly; returns the best checkpoint by validation IoU.

    Validation runs after every epoch (or every ``eval_interval`` steps) on
    the dense validation set using the pooled IoU. Training stops after
    ``early_stop_patience`` evaluations without improvement, or at the epoch
    or step budget.
    """
    with deterministic_context(config):
        return _train(config, dataset, on_eval)


def _train(config, dataset, on_eval):
    dataset = dataset or load_dataset(config)
    if not dataset.train:
        raise ConfigurationError("training split is empty")
    val_items = dataset.val or dataset.train
    val_samples = eval_samples(val_items, config)

    model = build_model(config)
    optimizer = Adam(model.named_parameters(), lr=config.lr)
    stream = _TrainStream(dataset.train, config)
    aug_rng, point_rng = _rng(config.seed, _AUGMENT), _rng(config.seed, _POINTS)
    records = []
    best, best_ckpt, stale = -np.inf, None, 0
    step, epoch = 0, 0
    params = count_parameters(model)
    start = time.perf_counter()

    def evaluate_now():
        nonlocal best, best_ckpt, stale
        report = evaluate_model(model, val_samples)
        iou = report.aggregate_iou
        records.append({"epoch": epoch, "step": step, "val_iou": iou})
        if on_eval is not None:
            on_eval(epoch, step, iou)
        log.info("epoch %d step %d val IoU %.4f (%.1fs)", epoch, step, iou,
                 time.perf_counter() - start)
        if iou > best:
            best, stale = iou, 0
            best_ckpt = snapshot(model, optimizer, config, epoch, step, iou)
        else:
            stale += 1
        return stale >= config.early_stop_patience

    done, evaluated_at = False, -1
    while not done:
        epoch += 1
        samples = stream.epoch()
        bs = min(config.batch_size, len(samples))
        for lo in range(0, len(samples) - bs + 1, bs):
            step += 1
            images, coords, labels = make_batch(samples[lo:lo + bs], config, aug_rng, point_rng)
            loss = train_step(model, optimizer, images, coords, labels, step)
            records.append({"epoch": epoch, "step": step, "loss": loss})
            if config.eval_interval and step % config.eval_interval == 0:
                evaluated_at = step
                done = evaluate_now()
            if config.max_steps and step >= config.max_steps:
                done = True
            if done:
                break
        if not config.eval_interval and evaluated_at != step:
            evaluated_at = step
            done = evaluate_now() or done
        if config.max_epochs and epoch >= config.max_epochs:
            done = True
    if evaluated_at != step:
        evaluate_now()

    log.info("trained %d steps, %d params, best val IoU %.4f", step, params, best)
    return TrainResult(best_ckpt, records, model)


def model_from_checkpoint(ckpt):
    model = build_model(ckpt.config)
    model.load_state_dict(ckpt.model_state)
    return model.eval()


def predict_logits(model, image):
    """Dense logits ``[H*W, K]`` for one ``[3, H, W]`` image."""
    model.eval()
    _, H, W = image.shape
    model.encoder_config.output_shape(H, W)
    coords = D.dense_grid(H, W).coords
    with no_grad():
        feats = model.encoder(Tensor(image[None].astype(model.dtype)))
        chunks = [model.decode(feats, coords[None, lo:lo + DENSE_CHUNK]).data[0]
                  for lo in range(0, len(coords), DENSE_CHUNK)]
    return np.concatenate(chunks, axis=0)


def predict_mask(model, image):
    _, H, W = image.shape
    return predict_logits(model, image).argmax(axis=-1).reshape(H, W).astype(np.uint8)


def evaluate_model(model, samples, seed=0):
    start = time.perf_counter()
    conf = np.zeros((6, 6), dtype=np.int64)
    for item in samples:
        s = _materialize(item)
        pred = predict_mask(model, s.image)
        conf += confusion_matrix(pred, s.mask, K=6)
    return MetricsReport.from_confusion(conf, params=count_parameters(model), seed=seed,
                                        runtime_s=time.perf_counter() - start)


def evaluate(checkpoint, samples):
    """Dense evaluation of a checkpoint on a list of samples (or tile refs)."""
    with deterministic_context(checkpoint.config):
        model = model_from_checkpoint(checkpoint)
        return evaluate_model(model, eval_samples(samples, checkpoint.config),
                              seed=checkpoint.config.seed)


def evaluate_masks(pairs):
    """Metrics for ``(pred_mask, true_mask)`` pairs, bypassing any model."""
    conf = np.zeros((6, 6), dtype=np.int64)
    for pred, truth in pairs:
        conf += confusion_matrix(pred, truth)
    return MetricsReport.from_confusion(conf)


def predict(checkpoint, image, out_path=None):
    """Class mask for ``image[3,H,W]``, plus its color rendering (optionally written as PNG)."""
    with deterministic_context(checkpoint.config):
        mask = predict_mask(model_from_checkpoint(checkpoint), image)
    rgb = D.encode_label_colors(mask)
    if out_path is not None:
        D.write_png(out_path, rgb)
    return mask, rgb
