"""Small trainable CNN encoder and a receptive-field calculator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.module import BatchNorm, Conv2d, Module
from .errors import ConfigurationError, ContractViolation


@dataclass(frozen=True)
class ConvLayerSpec:
    kernel: int
    stride: int = 1
    dilation: int = 1

    def __post_init__(self):
        if min(self.kernel, self.stride, self.dilation) < 1:
            raise ContractViolation(f"invalid conv layer spec {self}")


def receptive_field(layers):
    """Receptive field in input pixels of one output cell of a layer stack.

    Uses the recurrence ``r += (kernel - 1) * dilation * jump; jump *= stride``
    starting from ``r = jump = 1``.
    """
    layers = list(layers)
    if not layers:
        raise ContractViolation("receptive_field needs at least one layer")
    r, jump = 1, 1
    for layer in layers:
        r += (layer.kernel - 1) * layer.dilation * jump
        jump *= layer.stride
    return r


def _resnet34_layers():
    layers = [ConvLayerSpec(7, 2), ConvLayerSpec(3, 2)]  # stem conv, max-pool
    for stage, blocks in enumerate((3, 4, 6, 3)):
        for block in range(blocks):
            first_stride = 2 if stage > 0 and block == 0 else 1
            layers += [ConvLayerSpec(3, first_stride), ConvLayerSpec(3, 1)]
    return tuple(layers)


# Main path only; the 1x1 projection shortcuts do not widen the field.
RESNET34_LAYERS = _resnet34_layers()


@dataclass(frozen=True)
class EncoderConfig:
    """``widths[0]`` is the stem width; each further entry adds one stride-2 stage."""

    widths: tuple = (16, 32, 64, 128, 128)
    in_channels: int = 3

    def __post_init__(self):
        if len(self.widths) < 1 or min(self.widths) < 1:
            raise ConfigurationError(f"invalid encoder widths {self.widths}")

    @property
    def stages(self):
        return len(self.widths) - 1

    @property
    def downsample(self):
        return 2 ** (self.stages + 1)

    @property
    def out_channels(self):
        return self.widths[-1]

    @classmethod
    def with_downsample(cls, downsample, channels=128):
        """Desk widths ``16, 32, 64, 128, ...`` truncated to the given downsample factor."""
        stages = int(np.log2(downsample)) - 1
        if stages < 0 or 2 ** (stages + 1) != downsample:
            raise ConfigurationError(f"downsample must be a power of two >= 2, got {downsample}")
        base = [16, 32, 64, 128, 128, 128, 128]
        widths = [min(w, channels) for w in base[: stages + 1]]
        widths[-1] = channels
        return cls(widths=tuple(widths))

    def output_shape(self, H, W):
        d = self.downsample
        if H % d or W % d:
            raise ConfigurationError(f"input {H}x{W} not divisible by downsample factor {d}")
        return self.out_channels, H // d, W // d

    def layer_specs(self):
        specs = [ConvLayerSpec(3, 2)]
        for _ in range(self.stages):
            specs += [ConvLayerSpec(3, 2), ConvLayerSpec(3, 1)]
        return specs


class ConvBNReLU(Module):
    def __init__(self, c_in, c_out, stride, rng, dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, 3, rng, stride=stride, pad=1, bias=False, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)

    def forward(self, x):
        return ops.relu(self.bn(self.conv(x)))


class Encoder(Module):
    """Stem conv (stride 2), then stages of [conv s2, BN, ReLU, conv s1, BN, ReLU]."""

    def __init__(self, config=None, rng=None, dtype=np.float32):
        self.config = config or EncoderConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        w = self.config.widths
        self.stem = ConvBNReLU(self.config.in_channels, w[0], 2, rng, dtype)
        layers = []
        for c_in, c_out in zip(w[:-1], w[1:]):
            layers += [ConvBNReLU(c_in, c_out, 2, rng, dtype),
                       ConvBNReLU(c_out, c_out, 1, rng, dtype)]
        self.layers = layers

    def forward(self, images):
        if images.ndim != 4 or images.shape[1] != self.config.in_channels:
            raise ContractViolation(f"encoder expects [B,{self.config.in_channels},H,W], "
                                    f"got {images.shape}")
        self.config.output_shape(*images.shape[2:])
        x = self.stem(images)
        for layer in self.layers:
            x = layer(x)
        return x


def encoder_forward(images, encoder):
    return encoder(images)
