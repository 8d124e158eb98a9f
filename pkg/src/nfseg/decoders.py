"""Conditional neural-field decoders: Concat, FiLM and Cross-Attention.

All decoders map embedded points ``[B, S, e]`` plus a conditioning input to
class logits ``[B, S, K]``. Concat and FiLM take per-point codes
``[B, S, d]`` and treat every point independently apart from the batch
statistics of their normalization layers; Cross-Attention takes per-image
tokens ``[B, T, d_tok]``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import fields
from .diffcore import ops
from .diffcore.module import BatchNorm, LayerNorm, Linear, Module, MultiHeadAttention
from .diffcore.tensor import Tensor
from .encoder import Encoder, EncoderConfig
from .errors import ConfigurationError, ContractViolation

STRATEGIES = (
    ("concat", "global"),
    ("concat", "local"),
    ("concat", "combined"),
    ("film", "global"),
    ("film", "local"),
    ("film", "combined"),
    ("cross_attention", "tokens"),
)


@dataclass(frozen=True)
class DecoderConfig:
    strategy: str = "concat"
    code_source: str = "global"
    hidden: int = 512
    blocks: Optional[int] = None
    heads: int = 8
    embed_l: int = 4
    classes: int = 6
    positional_tokens: bool = True

    def __post_init__(self):
        if self.strategy not in ("concat", "film", "cross_attention"):
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.code_source not in fields.CODE_KINDS:
            raise ConfigurationError(f"unknown code source {self.code_source!r}")
        if (self.strategy == "cross_attention") != (self.code_source == "tokens"):
            raise ConfigurationError("cross_attention must be paired with code_source 'tokens'")
        if self.hidden < 1 or self.classes < 1 or self.embed_l < 0:
            raise ConfigurationError("hidden, classes must be positive and embed_l >= 0")
        if self.heads < 1 or self.hidden % self.heads:
            raise ConfigurationError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.blocks is None:
            object.__setattr__(self, "blocks", 2 if self.strategy == "cross_attention" else 1)
        if self.blocks < 1:
            raise ConfigurationError("need at least one block")

    @property
    def label(self):
        return f"{self.strategy}/{self.code_source}"

    def with_strategy(self, strategy, code_source):
        return replace(self, strategy=strategy, code_source=code_source, blocks=None)


class ConcatBlock(Module):
    """Two [concat code -> linear -> batchnorm -> ReLU] sites with a residual add."""

    def __init__(self, k, d, rng, dtype=np.float32):
        # biases would be cancelled by the batchnorm that follows
        self.fc_0 = Linear(k + d, k, rng, bias=False, dtype=dtype)
        self.bn_0 = BatchNorm(k, dtype=dtype)
        self.fc_1 = Linear(k + d, k, rng, bias=False, dtype=dtype)
        self.bn_1 = BatchNorm(k, dtype=dtype)

    def forward(self, h, code):
        a = ops.relu(self.bn_0(self.fc_0(ops.concat([h, code], axis=-1))))
        a = ops.relu(self.bn_1(self.fc_1(ops.concat([a, code], axis=-1))))
        return ops.add(h, a)


class ConditionalBatchNorm(Module):
    """Affine-free batchnorm followed by ``gamma(code) * x + beta(code)``."""

    def __init__(self, k, d, rng, dtype=np.float32):
        self.bn = BatchNorm(k, affine=False, dtype=dtype)
        self.gamma = Linear(d, k, rng, dtype=dtype)
        self.beta = Linear(d, k, rng, dtype=dtype)
        # start as the identity modulation
        self.gamma.weight.data[:] = 0
        self.gamma.bias.data[:] = 1
        self.beta.weight.data[:] = 0
        self.beta.bias.data[:] = 0

    def forward(self, x, code):
        return ops.add(ops.mul(self.gamma(code), self.bn(x)), self.beta(code))


class FiLMBlock(Module):
    """Concat block topology with each conditioning site replaced by conditional batchnorm."""

    def __init__(self, k, d, rng, dtype=np.float32):
        self.fc_0 = Linear(k, k, rng, bias=False, dtype=dtype)
        self.cbn_0 = ConditionalBatchNorm(k, d, rng, dtype)
        self.fc_1 = Linear(k, k, rng, bias=False, dtype=dtype)
        self.cbn_1 = ConditionalBatchNorm(k, d, rng, dtype)

    def forward(self, h, code):
        a = ops.relu(self.cbn_0(self.fc_0(h), code))
        a = ops.relu(self.cbn_1(self.fc_1(a), code))
        return ops.add(h, a)


class _PointwiseDecoder(Module):
    block_type = None

    def __init__(self, e, d, k, n_blocks, classes, rng, dtype=np.float32):
        self.e, self.d = e, d
        self.fc_in = Linear(e, k, rng, dtype=dtype)
        self.blocks = [self.block_type(k, d, rng, dtype) for _ in range(n_blocks)]
        self.fc_out = Linear(k, classes, rng, dtype=dtype)

    def forward(self, points_emb, code):
        if points_emb.ndim != 3 or points_emb.shape[-1] != self.e:
            raise ContractViolation(f"expected embedded points [B,S,{self.e}], "
                                    f"got {points_emb.shape}")
        if code.shape[:-1] != points_emb.shape[:-1] or code.shape[-1] != self.d:
            raise ContractViolation(f"expected codes [B,S,{self.d}], got {code.shape}")
        B, S, _ = points_emb.shape
        h = self.fc_in(ops.reshape(points_emb, (B * S, self.e)))
        c = ops.reshape(code, (B * S, self.d))
        for block in self.blocks:
            h = block(h, c)
        logits = self.fc_out(ops.relu(h))
        return ops.reshape(logits, (B, S, logits.shape[-1]))


class ConcatDecoder(_PointwiseDecoder):
    block_type = ConcatBlock


class FiLMDecoder(_PointwiseDecoder):
    block_type = FiLMBlock


class AttentionBlock(Module):
    """Pre-norm transformer block: cross-attention to tokens, then a ReLU MLP."""

    def __init__(self, k, heads, rng, dtype=np.float32):
        self.ln_attn = LayerNorm(k, dtype=dtype)
        self.attn = MultiHeadAttention(k, heads, rng, dtype=dtype)
        self.ln_mlp = LayerNorm(k, dtype=dtype)
        self.mlp_0 = Linear(k, 2 * k, rng, dtype=dtype)
        self.mlp_1 = Linear(2 * k, k, rng, dtype=dtype)
        self.last_attention = None

    def forward(self, q, tokens):
        a = self.attn(self.ln_attn(q), tokens)
        self.last_attention = a.data
        q = ops.add(q, a)
        m = self.mlp_1(ops.relu(self.mlp_0(self.ln_mlp(q))))
        return ops.add(q, m)


def canonical_order(tokens):
    """Per-batch permutation sorting tokens ``[B,T,d]`` lexicographically by value."""
    return np.stack([np.lexsort(t.T[::-1]) for t in tokens])


class CrossAttentionDecoder(Module):
    def __init__(self, e, d_tok, k, n_blocks, heads, classes, rng, dtype=np.float32):
        self.e, self.d_tok = e, d_tok
        self.token_proj = Linear(d_tok, k, rng, dtype=dtype)
        self.query_in = Linear(e, k, rng, dtype=dtype)
        self.blocks = [AttentionBlock(k, heads, rng, dtype) for _ in range(n_blocks)]
        self.ln_out = LayerNorm(k, dtype=dtype)
        self.fc_out = Linear(k, classes, rng, dtype=dtype)

    def forward(self, points_emb, tokens):
        if points_emb.ndim != 3 or points_emb.shape[-1] != self.e:
            raise ContractViolation(f"expected embedded points [B,S,{self.e}], "
                                    f"got {points_emb.shape}")
        if tokens.ndim != 3 or tokens.shape[-1] != self.d_tok:
            raise ContractViolation(f"expected tokens [B,T,{self.d_tok}], got {tokens.shape}")
        if tokens.shape[1] == 0:
            raise ContractViolation("cross-attention needs at least one token")
        if tokens.shape[0] != points_emb.shape[0]:
            raise ContractViolation("points and tokens disagree on batch size")
        # Attention treats tokens as a set, but its sums still run in input
        # order; a canonical (lexicographic) order makes the result exactly
        # independent of how the tokens were listed.
        tokens = ops.gather_rows(tokens, canonical_order(tokens.data))
        kv = self.token_proj(tokens)
        q = self.query_in(points_emb)
        for block in self.blocks:
            q = block(q, kv)
        return self.fc_out(self.ln_out(q))


def concat_decoder(points_emb, code, model):
    return model(points_emb, code)


def film_decoder(points_emb, code, model):
    return model(points_emb, code)


def cross_attention_decoder(points_emb, tokens, model):
    return model(points_emb, tokens)


def build_decoder(config, feature_channels, rng, dtype=np.float32):
    e = fields.embed_dim(config.embed_l)
    k = config.hidden
    if config.strategy == "cross_attention":
        d_tok = fields.token_dim(feature_channels, config.embed_l, config.positional_tokens)
        return CrossAttentionDecoder(e, d_tok, k, config.blocks, config.heads, config.classes,
                                     rng, dtype)
    d = fields.code_dim(config.code_source, feature_channels)
    cls = ConcatDecoder if config.strategy == "concat" else FiLMDecoder
    return cls(e, d, k, config.blocks, config.classes, rng, dtype)


class NeuralFieldModel(Module):
    """Encoder plus conditional neural-field decoder: images and points in, logits out."""

    def __init__(self, decoder_config, encoder_config=None, seed=0, dtype=np.float32):
        self.config = decoder_config
        self.encoder_config = encoder_config or EncoderConfig()
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(self.encoder_config, rng, dtype)
        self.decoder = build_decoder(decoder_config, self.encoder_config.out_channels, rng, dtype)
        self.dtype = np.dtype(dtype)

    def astype(self, dtype):
        super().astype(dtype)
        self.dtype = np.dtype(dtype)
        return self

    def embed(self, coords):
        return Tensor(fields.embed_point(coords, self.config.embed_l).astype(self.dtype))

    def decode(self, features, coords):
        """Logits ``[B,S,K]`` for points ``coords[B,S,2]`` given encoder features."""
        cond = fields.build_conditioning(self.config.code_source, features, coords,
                                         l=self.config.embed_l,
                                         positional=self.config.positional_tokens)
        return self.decoder(self.embed(coords), cond.value)

    def forward(self, images, coords):
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, dtype=self.dtype))
        return self.decode(self.encoder(images), coords)


def count_parameters(model):
    """Total number of scalar parameters in a module."""
    return sum(p.data.size for _, p in model.named_parameters())
