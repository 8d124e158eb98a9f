"""Differentiable kernels: forward computation plus a hand-written pullback."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, ContractViolation
from .tensor import Tensor, as_tensor, make_result

BN_MOMENTUM = 0.1
NORM_EPS = 1e-5


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _operand(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# -- elementwise and structural ------------------------------------------------

def add(a, b):
    a = as_tensor(a)
    b = _operand(b, a)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b):
    a = as_tensor(a)
    b = _operand(b, a)
    ad, bd = a.data, b.data

    def pullback(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_result(ad * bd, (a, b), pullback)


def relu(x):
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,),
                       lambda g: (g * mask,))


def reshape(x, shape):
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x, axes):
    inverse = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def pullback(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, pullback)


def broadcast_to(x, shape):
    src = x.shape
    return make_result(np.broadcast_to(x.data, shape), (x,),
                       lambda g: (_unbroadcast(g, src),))


def gather_rows(x, index):
    """``out[b, i] = x[b, index[b, i]]`` for ``x[B, T, ...]`` and integer ``index[B, n]``."""
    x = as_tensor(x)
    index = np.asarray(index)
    if index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise ContractViolation(f"gather_rows: index {index.shape} does not match {x.shape}")
    idx = index.reshape(index.shape + (1,) * (x.ndim - 2))
    out = np.take_along_axis(x.data, idx, axis=1)

    def pullback(g):
        gx = np.zeros_like(x.data)
        batch = np.arange(x.shape[0])[:, None]
        np.add.at(gx, (batch, index), g)
        return (gx,)

    return make_result(out, (x,), pullback)


def sum_all(x):
    src = x.shape
    return make_result(np.asarray(x.data.sum()), (x,),
                       lambda g: (np.broadcast_to(g, src).copy(),))


def mean(x, axis):
    axis = tuple(np.atleast_1d(axis))
    count = int(np.prod([x.shape[a] for a in axis]))
    src = x.shape

    def pullback(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / count, src).copy(),)

    return make_result(x.data.mean(axis=axis), (x,), pullback)


# BLAS row-tail kernels (narrow outputs, row counts off the tile size) can
# round differently from full tiles, so a row's result would depend on its
# position. Padding rows to a whole number of tiles keeps every row on the
# same code path, which makes products exactly equivariant to row order.
ROW_TILE = 16


def _rowstable(a, b):
    rows = a.shape[-2]
    if rows % ROW_TILE == 0:
        return a @ b
    padded = np.zeros(a.shape[:-2] + (rows + ROW_TILE - rows % ROW_TILE, a.shape[-1]), a.dtype)
    padded[..., :rows, :] = a
    return (padded @ b)[..., :rows, :]


def matmul(a, b):
    """Batched matrix product ``a @ b`` (numpy broadcasting on leading dims)."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def pullback(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(_rowstable(ad, bd), (a, b), pullback)


# -- layers --------------------------------------------------------------------

def linear(x, W, b=None):
    """``y[..., j] = sum_k x[..., k] W[j, k] + b[j]``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ContractViolation(f"linear: input {x.shape} incompatible with weight {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ContractViolation(f"linear: bias {b.shape} does not match weight {W.shape}")
    xd, Wd = x.data, W.data
    lead = xd.shape[:-1]
    x2 = np.ascontiguousarray(xd.reshape(-1, xd.shape[-1]))  # broadcast codes arrive with stride 0
    y = _rowstable(x2, Wd.T)
    if b is not None:
        y += b.data
    y = y.reshape(lead + (Wd.shape[0],))

    def pullback(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ Wd).reshape(xd.shape) if x.requires_grad else None
        gW = g2.T @ x2 if W.requires_grad else None
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return make_result(y, parents, pullback)


def conv2d(x, K, b=None, stride=1, pad=0):
    """2-D cross-correlation of ``x[B,C,H,W]`` with ``K[F,C,kh,kw]``."""
    x, K = as_tensor(x), as_tensor(K)
    if x.ndim != 4 or K.ndim != 4 or x.shape[1] != K.shape[1]:
        raise ContractViolation(f"conv2d: input {x.shape} incompatible with kernel {K.shape}")
    if stride < 1 or pad < 0:
        raise ContractViolation("conv2d: stride must be >= 1 and pad >= 0")
    B, C, H, W = x.shape
    F, _, kh, kw = K.shape
    if kh > H + 2 * pad or kw > W + 2 * pad:
        raise ContractViolation(f"conv2d: kernel {kh}x{kw} larger than padded input "
                                f"{H + 2 * pad}x{W + 2 * pad}")
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    Kmat = K.data.reshape(F, -1)
    y = cols @ Kmat.T
    if b is not None:
        y += b.data
    y = y.reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)

    def pullback(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, F)
        gK = (g2.T @ cols).reshape(K.shape) if K.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ Kmat).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            hi, wi = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + hi:stride, j:j + wi:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        if b is None:
            return gx, gK
        return gx, gK, g2.sum(axis=0)

    parents = (x, K) if b is None else (x, K, b)
    return make_result(np.ascontiguousarray(y), parents, pullback)


def batchnorm(x, gamma=None, beta=None, running_mean=None, running_var=None,
              training=True, momentum=BN_MOMENTUM, eps=NORM_EPS):
    """Batch normalization over every axis except axis 1 (the feature axis).

    Works for ``x[N,k]`` and ``x[N,C,H,W]``. In training mode the batch
    statistics are used and ``running_mean``/``running_var`` (numpy arrays,
    updated in place) track an exponential moving average. ``gamma``/``beta``
    may be None for an affine-free normalization.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ContractViolation("batchnorm expects at least 2 dimensions")
    k = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, k) + (1,) * (x.ndim - 2)
    n = x.data.size // k
    xd = x.data
    if training:
        if n < 2:
            raise ContractViolation("batchnorm in train mode needs at least 2 values per feature")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if running_mean is not None:
            running_mean *= 1 - momentum
            running_mean += momentum * mu
        if running_var is not None:
            running_var *= 1 - momentum
            running_var += momentum * var * (n / (n - 1))
    else:
        if running_mean is None or running_var is None:
            raise ContractViolation("batchnorm in eval mode needs running statistics")
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape)) * inv_std.reshape(bshape)
    y = xhat
    if gamma is not None:
        y = y * gamma.data.reshape(bshape)
    if beta is not None:
        y = y + beta.data.reshape(bshape)

    def pullback(g):
        gxhat = g * gamma.data.reshape(bshape) if gamma is not None else g
        if training:
            s1 = gxhat.sum(axis=axes, keepdims=True)
            s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
            gx = (gxhat - s1 / n - xhat * (s2 / n)) * inv_std.reshape(bshape)
        else:
            gx = gxhat * inv_std.reshape(bshape)
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=axes))
        if beta is not None:
            grads.append(g.sum(axis=axes))
        return tuple(grads)

    parents = [x] + [p for p in (gamma, beta) if p is not None]
    return make_result(y, parents, pullback)


def layernorm(x, gamma=None, beta=None, eps=NORM_EPS):
    """Normalize each row over the last axis, then scale and shift."""
    x = as_tensor(x)
    k = x.shape[-1]
    if k < 1:
        raise ContractViolation("layernorm needs a non-empty last axis")
    for p in (gamma, beta):
        if p is not None and p.shape != (k,):
            raise ContractViolation(f"layernorm affine shape {p.shape} != ({k},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    y = xhat
    if gamma is not None:
        y = y * gamma.data
    if beta is not None:
        y = y + beta.data

    def pullback(g):
        gxhat = g * gamma.data if gamma is not None else g
        s1 = gxhat.mean(axis=-1, keepdims=True)
        s2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        grads = [(gxhat - s1 - xhat * s2) * inv_std]
        lead = tuple(range(xd.ndim - 1))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    parents = [x] + [p for p in (gamma, beta) if p is not None]
    return make_result(y, parents, pullback)


def _split_heads(a, heads):
    *lead, n, k = a.shape
    return np.moveaxis(a.reshape(*lead, n, heads, k // heads), -2, -3)


def _merge_heads(a):
    a = np.moveaxis(a, -3, -2)
    return a.reshape(*a.shape[:-2], -1)


def attention(q, k, v, heads, return_weights=False):
    """Scaled dot-product attention of queries ``q[..., S, d]`` over keys/values ``[..., T, d]``.

    The feature axis is split into ``heads`` equal groups, each attended
    independently with scale ``1/sqrt(d/heads)``.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if k.shape[-2] == 0:
        raise ContractViolation("attention needs at least one token")
    if d % heads:
        raise ConfigurationError(f"feature width {d} not divisible by {heads} heads")
    if k.shape != v.shape or k.shape[-1] != d:
        raise ContractViolation(f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    scale = 1.0 / np.sqrt(d // heads)
    Qh, Kh, Vh = (_split_heads(a.data, heads) for a in (q, k, v))
    scores = _rowstable(Qh, np.swapaxes(Kh, -1, -2)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    A = np.exp(scores)
    A /= A.sum(axis=-1, keepdims=True)
    A = A.astype(q.dtype, copy=False)
    out = _merge_heads(_rowstable(A, Vh))

    def pullback(g):
        gO = _split_heads(g, heads)
        gA = gO @ np.swapaxes(Vh, -1, -2)
        gS = A * (gA - (gA * A).sum(axis=-1, keepdims=True)) * scale
        gQ = _merge_heads(gS @ Kh) if q.requires_grad else None
        gK = _merge_heads(np.swapaxes(gS, -1, -2) @ Qh) if k.requires_grad else None
        gV = _merge_heads(np.swapaxes(A, -1, -2) @ gO) if v.requires_grad else None
        return (_unbroadcast(gQ, q.shape) if gQ is not None else None,
                _unbroadcast(gK, k.shape) if gK is not None else None,
                _unbroadcast(gV, v.shape) if gV is not None else None)

    result = make_result(out, (q, k, v), pullback)
    return (result, A) if return_weights else result


def multi_head_attention(q, tokens, Wq, bq, Wk, bk, Wv, bv, Wo, bo, heads):
    """Multi-head cross-attention with learned projections.

    Queries come from ``q[..., S, d]``, keys and values from
    ``tokens[..., T, d]``; the result is passed through an output projection.
    """
    tokens = as_tensor(tokens)
    if tokens.ndim < 2 or tokens.shape[-2] == 0:
        raise ContractViolation("multi_head_attention needs at least one token")
    if Wq.shape[0] % heads:
        raise ConfigurationError(f"width {Wq.shape[0]} not divisible by {heads} heads")
    Q = linear(q, Wq, bq)
    K = linear(tokens, Wk, bk)
    V = linear(tokens, Wv, bv)
    return linear(attention(Q, K, V, heads), Wo, bo)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels[N]`` under ``softmax(logits[N,K])``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ContractViolation(f"cross entropy: logits {logits.shape} vs labels {labels.shape}")
    N, K = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ContractViolation(f"label out of range [0, {K})")
    logp = log_softmax(logits.data)
    rows = np.arange(N)
    loss = -logp[rows, labels].mean()

    def pullback(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / N),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), pullback)
