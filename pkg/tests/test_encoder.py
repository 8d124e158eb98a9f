import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfseg.diffcore import Tensor, finite_diff_check
from nfseg.encoder import (
    RESNET34_LAYERS,
    ConvLayerSpec,
    Encoder,
    EncoderConfig,
    encoder_forward,
    receptive_field,
)
from nfseg.errors import ConfigurationError, ContractViolation


def loop_conv(x, K, stride, pad):
    """Direct-sum convolution, one output at a time."""
    C, H, W = x.shape
    O, _, k, _ = K.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = (H + 2 * pad - k) // stride + 1, (W + 2 * pad - k) // stride + 1
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                patch = xp[:, i * stride:i * stride + k, j * stride:j * stride + k]
                out[o, i, j] = (patch * K[o]).sum()
    return out


def ref_bn_relu(y, eps=1e-5):
    mu = y.mean(axis=(0, 2, 3), keepdims=True)
    var = y.var(axis=(0, 2, 3), keepdims=True)
    return np.maximum((y - mu) / np.sqrt(var + eps), 0.0)


def test_receptive_field_examples():
    assert receptive_field([ConvLayerSpec(3)]) == 3
    assert receptive_field([ConvLayerSpec(3), ConvLayerSpec(3)]) == 5


def test_resnet34_receptive_field_is_899():
    assert len(RESNET34_LAYERS) == 2 + 2 * (3 + 4 + 6 + 3)
    assert receptive_field(RESNET34_LAYERS) == 899


def test_receptive_field_errors():
    with pytest.raises(ContractViolation):
        receptive_field([])
    with pytest.raises(ContractViolation):
        ConvLayerSpec(0)


layer_lists = st.lists(st.tuples(st.integers(1, 7), st.integers(1, 3), st.integers(1, 3)),
                       min_size=1, max_size=8)


@settings(max_examples=100)
@given(layer_lists, st.data())
def test_receptive_field_monotone(raw, data):
    layers = [ConvLayerSpec(*t) for t in raw]
    base = receptive_field(layers)
    i = data.draw(st.integers(0, len(layers) - 1))
    k, s, d = raw[i]
    grown = layers[:i] + [ConvLayerSpec(k + 1, s, d)] + layers[i + 1:]
    assert receptive_field(grown) >= base
    assert receptive_field(layers + [ConvLayerSpec(data.draw(st.integers(1, 5)))]) >= base


def test_desk_config_defaults():
    cfg = EncoderConfig()
    assert cfg.widths == (16, 32, 64, 128, 128)
    assert cfg.stages == 4 and cfg.downsample == 32 and cfg.out_channels == 128
    assert EncoderConfig.with_downsample(32) == cfg
    assert EncoderConfig.with_downsample(16).widths == (16, 32, 64, 128)
    with pytest.raises(ConfigurationError):
        EncoderConfig.with_downsample(24)


@pytest.mark.parametrize("H,W,ds,c,expected", [
    (256, 256, 32, 512, (512, 8, 8)),
    (512, 512, 32, 512, (512, 16, 16)),
    (64, 64, 16, 128, (128, 4, 4)),
    (64, 96, 32, 128, (128, 2, 3)),
])
def test_output_shape_arithmetic(H, W, ds, c, expected):
    assert EncoderConfig.with_downsample(ds, c).output_shape(H, W) == expected


def test_indivisible_input_rejected():
    with pytest.raises(ConfigurationError):
        EncoderConfig().output_shape(100, 64)
    enc = Encoder(EncoderConfig.with_downsample(4, 4))
    with pytest.raises(ConfigurationError):
        enc(Tensor(np.zeros((1, 3, 10, 8), dtype=np.float32)))


@pytest.mark.parametrize("ds,H,W", [(4, 8, 12), (8, 16, 8), (16, 32, 16)])
def test_forward_shape_matches_closed_form(ds, H, W):
    cfg = EncoderConfig.with_downsample(ds, 8)
    out = encoder_forward(Tensor(np.zeros((2, 3, H, W), dtype=np.float32)), Encoder(cfg))
    assert out.shape == (2,) + cfg.output_shape(H, W)


def test_forward_matches_loop_reference():
    rng = np.random.default_rng(0)
    cfg = EncoderConfig(widths=(3, 4))
    enc = Encoder(cfg, rng, dtype=np.float64)
    x = rng.normal(size=(2, 3, 8, 8))
    out = enc(Tensor(x)).data

    def stage(x, layer, stride):
        y = np.stack([loop_conv(img, layer.conv.weight.data, stride, 1) for img in x])
        return ref_bn_relu(y)

    h = stage(x, enc.stem, 2)
    h = stage(h, enc.layers[0], 2)
    h = stage(h, enc.layers[1], 1)
    np.testing.assert_allclose(out, h, atol=1e-10)


def test_encoder_gradient_one_stage():
    rng = np.random.default_rng(1)
    enc = Encoder(EncoderConfig(widths=(2, 3)), rng, dtype=np.float64)
    x = Tensor(rng.normal(size=(1, 3, 16, 16)))
    R = rng.normal(size=(1, 3, 4, 4))
    params = list(enc.parameters().values())
    # BN over a single image still has 64 and 16 values per channel
    err = finite_diff_check(lambda x, *_: (enc(x) * R).sum(), [x] + params)
    assert err < 1e-4


def test_all_parameters_trainable():
    enc = Encoder()
    assert all(p.requires_grad for p in enc.parameters().values())
    names = set(enc.parameters())
    assert not any(n.endswith("bias") for n in names)  # convs feed batchnorm
