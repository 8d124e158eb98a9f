"""Finite-difference sweep over every differentiable kernel and the three decoders."""

from __future__ import annotations

import numpy as np

from ..decoders import STRATEGIES, DecoderConfig, NeuralFieldModel
from ..diffcore import (
    Tensor,
    batchnorm,
    conv2d,
    finite_diff_check,
    layernorm,
    linear,
    multi_head_attention,
    softmax_cross_entropy,
)
from ..encoder import EncoderConfig

KERNEL_TOLERANCE = 1e-5
DECODER_TOLERANCE = 1e-4


def _t(rng, *shape, scale=1.0):
    return Tensor(scale * rng.normal(size=shape))


def _linear_case(rng):
    n, k, m = rng.integers(1, 5, size=3)
    x, W, b, R = _t(rng, n, k), _t(rng, m, k), _t(rng, m), rng.normal(size=(n, m))
    return (lambda x, W, b: (linear(x, W, b) * R).sum()), [x, W, b]


def _conv_case(rng):
    B, C, O = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
    k, stride, pad = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2))
    H, W = rng.integers(k, k + 4, size=2)
    x, K, b = _t(rng, B, C, H, W), _t(rng, O, C, k, k), _t(rng, O)
    R = rng.normal(size=conv2d(x, K, b, stride, pad).shape)
    return (lambda x, K, b: (conv2d(x, K, b, stride, pad) * R).sum()), [x, K, b]


def _batchnorm_case(rng):
    # groups of two normalize to +-1 regardless of x, leaving nothing to check
    N, k = rng.integers(3, 7), rng.integers(1, 4)
    x, g, b, R = _t(rng, N, k), _t(rng, k), _t(rng, k), rng.normal(size=(N, k))
    return (lambda x, g, b: (batchnorm(x, g, b) * R).sum()), [x, g, b]


def _layernorm_case(rng):
    N, k = rng.integers(1, 5), rng.integers(3, 6)
    x, g, b, R = _t(rng, N, k), _t(rng, k), _t(rng, k), rng.normal(size=(N, k))
    return (lambda x, g, b: (layernorm(x, g, b) * R).sum()), [x, g, b]


def _attention_case(rng):
    heads = int(rng.integers(1, 3))
    k = heads * int(rng.integers(1, 4))
    S, T = rng.integers(1, 4), rng.integers(1, 5)
    # unit-scale weights can saturate the softmax, leaving query gradients
    # near 1e-6 where the relative error measures truncation, not the pullback
    shapes = [(S, k), (T, k), (k, k), (k,), (k, k), (k, k), (k,), (k, k), (k,)]
    args = [_t(rng, *s, scale=0.5) for s in shapes]
    R = rng.normal(size=(S, k))

    def fn(q, tok, Wq, bq, Wk, Wv, bv, Wo, bo):
        return (multi_head_attention(q, tok, Wq, bq, Wk, None, Wv, bv, Wo, bo, heads) * R).sum()

    return fn, args


def _cross_entropy_case(rng):
    N, K = rng.integers(1, 6), rng.integers(2, 6)
    labels = rng.integers(0, K, size=N)
    return (lambda z: softmax_cross_entropy(z, labels)), [_t(rng, N, K)]


KERNEL_CASES = {
    "linear": _linear_case,
    "conv2d": _conv_case,
    "batchnorm": _batchnorm_case,
    "layernorm": _layernorm_case,
    "multi_head_attention": _attention_case,
    "softmax_cross_entropy": _cross_entropy_case,
}


def kernel_errors(trials=20, seed=0):
    """Worst relative gradient error per kernel over ``trials`` random shapes.

    A coordinate whose true gradient is close to zero is compared on a
    relative scale, so it can dominate the result; the shapes and input
    scales above keep such coordinates rare.
    """
    out = {}
    for i, (name, make) in enumerate(KERNEL_CASES.items()):
        rng = np.random.default_rng([seed, i])
        worst = 0.0
        for _ in range(trials):
            fn, args = make(rng)
            worst = max(worst, finite_diff_check(fn, args))
        out[name] = worst
    return out


def decoder_error(strategy, code_source, seed=0):
    """Gradient error of a tiny f64 model's decoder forward plus cross-entropy loss.

    The encoder features are held fixed, so the check covers the code
    construction, the decoder, and the loss with respect to every decoder
    parameter and the features.
    """
    cfg = DecoderConfig(strategy=strategy, code_source=code_source, hidden=8, heads=2,
                        embed_l=1, classes=3)
    model = NeuralFieldModel(cfg, EncoderConfig(widths=(2, 3), in_channels=3),
                             seed=seed, dtype=np.float64).train()
    rng = np.random.default_rng(seed)
    features = Tensor(rng.normal(size=(2, 3, 2, 2)))
    coords = rng.uniform(size=(2, 5, 2))
    labels = rng.integers(0, 3, size=10)
    params = [p for _, p in model.decoder.named_parameters()]

    def fn(features, *_params):  # parameters are perturbed in place
        logits = model.decode(features, coords)
        return softmax_cross_entropy(logits.reshape(10, 3), labels)

    return finite_diff_check(fn, [features] + params)


def run_suite(trials=20, seed=0):
    """All kernel and decoder checks as ``{name: (error, tolerance)}``."""
    results = {name: (err, KERNEL_TOLERANCE)
               for name, err in kernel_errors(trials, seed).items()}
    for strategy, source in STRATEGIES:
        results[f"decoder {strategy}/{source}"] = (decoder_error(strategy, source, seed),
                                                   DECODER_TOLERANCE)
    return results
