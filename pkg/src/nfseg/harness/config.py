"""Experiment configuration with an INI-style text form and ``--key value`` overrides."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from ..decoders import DecoderConfig
from ..encoder import EncoderConfig
from ..errors import ConfigurationError


def _section(name, default, **meta):
    return field(default=default, metadata={"section": name, **meta})


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    strategy: str = _section("model", "concat")
    code_source: str = _section("model", "global")
    hidden: int = _section("model", 128)
    blocks: int = _section("model", 0)  # 0 selects the per-strategy default
    heads: int = _section("model", 8)
    embed_l: int = _section("model", 4)
    classes: int = _section("model", 6)
    positional_tokens: bool = _section("model", True)
    # encoder
    channels: int = _section("encoder", 128)
    downsample: int = _section("encoder", 32)
    # data
    dataset: str = _section("data", "synthetic")  # "synthetic" or a tile directory
    data_seed: int = _section("data", 0)
    image_size: int = _section("data", 64)
    n_train: int = _section("data", 200)
    n_val: int = _section("data", 40)
    n_test: int = _section("data", 40)
    train_tiles: str = _section("data", "")
    val_tiles: str = _section("data", "")
    test_tiles: str = _section("data", "")
    crops_per_epoch: int = _section("data", 200)
    eval_crops_per_tile: int = _section("data", 4)
    recrop: bool = _section("data", True)
    augment: bool = _section("data", True)
    overfit: bool = _section("data", False)
    # train
    points: int = _section("train", 512)
    sample_with_replacement: bool = _section("train", True)
    lr: float = _section("train", 1e-4)
    batch_size: int = _section("train", 16)
    max_epochs: int = _section("train", 30)
    max_steps: int = _section("train", 0)  # 0 means no step limit
    eval_interval: int = _section("train", 0)  # in steps; 0 evaluates once per epoch
    early_stop_patience: int = _section("train", 10)
    seed: int = _section("train", 0)
    deterministic: bool = _section("train", True)

    def __post_init__(self):
        self.decoder_config()
        self.encoder_config()
        if self.points < 1 or self.batch_size < 1 or self.lr < 0:
            raise ConfigurationError("points and batch_size must be positive, lr >= 0")
        if self.max_epochs < 1 and self.max_steps < 1:
            raise ConfigurationError("set max_epochs or max_steps")
        if self.image_size % self.downsample:
            raise ConfigurationError(f"image_size {self.image_size} not divisible by "
                                     f"downsample {self.downsample}")

    @classmethod
    def full_scale(cls, **overrides):
        """Hyper-parameters reported for the full-scale setup."""
        base = dict(hidden=512, channels=512, downsample=32, image_size=256, batch_size=64,
                    points=512, embed_l=4, lr=1e-4)
        base.update(overrides)
        return cls(**base)

    def decoder_config(self):
        return DecoderConfig(strategy=self.strategy, code_source=self.code_source,
                             hidden=self.hidden, blocks=self.blocks or None, heads=self.heads,
                             embed_l=self.embed_l, classes=self.classes,
                             positional_tokens=self.positional_tokens)

    def encoder_config(self):
        return EncoderConfig.with_downsample(self.downsample, self.channels)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def override(self, key, value):
        """Return a copy with one field set from its text form."""
        key = key.replace("-", "_")
        fields_by_name = {f.name: f for f in dataclasses.fields(self)}
        if key not in fields_by_name:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        return self.replace(**{key: _parse(fields_by_name[key], value)})

    def to_text(self):
        parser = configparser.ConfigParser()
        for f in dataclasses.fields(self):
            section = f.metadata["section"]
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, f.name, _format(getattr(self, f.name)))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        parser = configparser.ConfigParser()
        parser.read_string(text)
        by_name = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                key = key.replace("-", "_")
                if key not in by_name:
                    raise ConfigurationError(f"unknown configuration key [{section}] {key}")
                values[key] = _parse(by_name[key], raw)
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(f, raw):
    kind = type(f.default)
    raw = str(raw).strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"bad value {raw!r} for {f.name}") from exc
    return raw


def split_names(text):
    return [t.strip() for t in text.split(",") if t.strip()]
