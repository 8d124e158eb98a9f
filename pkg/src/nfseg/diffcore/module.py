"""Parameter containers and the standard layers built on the kernels in ops."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from . import ops
from .tensor import Tensor, parameter


class Module:
    """Container of named parameters, buffers, and child modules.

    Attributes holding a ``Tensor`` with ``requires_grad`` are parameters;
    names listed in ``_buffers`` are non-trainable numpy arrays (e.g. running
    statistics). Traversal follows attribute assignment order, so naming is
    deterministic.
    """

    _buffers: tuple = ()
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return dict(self.named_parameters())

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast every parameter and buffer in place."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for module in self.modules():
            for name in module._buffers:
                setattr(module, name, getattr(module, name).astype(dtype))
        return self

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        params = self.parameters()
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        if missing:
            raise ConfigurationError(f"state is missing entries: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ConfigurationError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()
        for name, buf in buffers.items():
            np.copyto(buf, np.asarray(state[name]).astype(buf.dtype))


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, dtype=np.float32):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = parameter(_uniform(rng, bound, (n_out, n_in), dtype))
        self.bias = parameter(_uniform(rng, bound, (n_out,), dtype)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, pad=0, bias=True, dtype=np.float32):
        bound = 1.0 / np.sqrt(c_in * kernel * kernel)
        self.weight = parameter(_uniform(rng, bound, (c_out, c_in, kernel, kernel), dtype))
        self.bias = parameter(_uniform(rng, bound, (c_out,), dtype)) if bias else None
        self.stride, self.pad = stride, pad

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm(Module):
    """Batch normalization for ``[N, k]`` or ``[N, C, H, W]`` inputs.

    With ``affine=False`` the layer only normalizes; conditional variants
    supply their own scale and shift.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, k, affine=True, momentum=ops.BN_MOMENTUM, eps=ops.NORM_EPS,
                 dtype=np.float32):
        self.gamma = parameter(np.ones(k), dtype=dtype) if affine else None
        self.beta = parameter(np.zeros(k), dtype=dtype) if affine else None
        self.running_mean = np.zeros(k, dtype=dtype)
        self.running_var = np.ones(k, dtype=dtype)
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training=self.training, momentum=self.momentum, eps=self.eps)


class LayerNorm(Module):
    def __init__(self, k, eps=ops.NORM_EPS, dtype=np.float32):
        self.gamma = parameter(np.ones(k), dtype=dtype)
        self.beta = parameter(np.zeros(k), dtype=dtype)
        self.eps = eps

    def forward(self, x):
        return ops.layernorm(x, self.gamma, self.beta, eps=self.eps)


class MultiHeadAttention(Module):
    def __init__(self, k, heads, rng, dtype=np.float32):
        if k % heads:
            raise ConfigurationError(f"width {k} not divisible by {heads} heads")
        self.heads = heads
        self.q_proj = Linear(k, k, rng, dtype=dtype)
        # a key bias shifts every score of a query equally and cannot affect the softmax
        self.k_proj = Linear(k, k, rng, bias=False, dtype=dtype)
        self.v_proj = Linear(k, k, rng, dtype=dtype)
        self.out_proj = Linear(k, k, rng, dtype=dtype)

    def forward(self, q, tokens):
        return ops.multi_head_attention(
            q, tokens,
            self.q_proj.weight, self.q_proj.bias, self.k_proj.weight, self.k_proj.bias,
            self.v_proj.weight, self.v_proj.bias, self.out_proj.weight, self.out_proj.bias,
            self.heads)
