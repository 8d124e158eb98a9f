"""Point embeddings and the conditioning sources derived from a feature map.

Coordinates are normalized image positions ``(x, y)`` in ``[0, 1]^2`` with
``x`` running along the width. Pixel ``(i, j)`` of an ``H x W`` grid sits at
``((j + 0.5) / W, (i + 0.5) / H)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diffcore import ops
from .diffcore.tensor import Tensor, as_tensor
from .errors import ContractViolation

CODE_KINDS = ("global", "local", "combined", "tokens")


@dataclass
class PointSet:
    """Normalized coordinates ``[S, 2]`` (or ``[B, S, 2]``) with optional labels."""

    coords: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords)
        _check_unit(self.coords)
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != self.coords.shape[:-1]:
                raise ContractViolation("labels must have one entry per point")

    def __len__(self):
        return self.coords.shape[-2]


@dataclass
class ConditioningInput:
    """Per-point code vectors ``[B, S, d]`` or per-image tokens ``[B, T, d_tok]``."""

    kind: str
    value: Tensor

    @property
    def dim(self):
        return self.value.shape[-1]


def _check_unit(a):
    a = np.asarray(a)
    if a.size and (np.nanmin(a) < 0.0 or np.nanmax(a) > 1.0 or np.isnan(a).any()):
        raise ContractViolation("coordinates must lie in [0, 1]")


def _sinpi(t):
    """``sin(pi * t)``, exact at every multiple of 1/2."""
    r = t - 2.0 * np.round(t / 2.0)  # exact for binary fractions, r in [-1, 1]
    r = np.where(r > 0.5, 1.0 - r, r)
    r = np.where(r < -0.5, -1.0 - r, r)
    return np.sin(np.pi * r)


def fourier_embed(x, l):
    """Sinusoidal embedding ``(sin(2^0 pi x) .. sin(2^l pi x), cos(2^0 pi x) .. cos(2^l pi x))``.

    ``x`` may be a scalar or an array; the embedding is appended as a new
    last axis of length ``2 (l + 1)``.
    """
    if l < 0:
        raise ContractViolation("embedding size l must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    _check_unit(x)
    t = x[..., None] * (2.0 ** np.arange(l + 1))
    return np.concatenate([_sinpi(t), _sinpi(t + 0.5)], axis=-1)


def embed_point(p, l):
    """Embed ``p[..., 2]`` as ``fourier_embed(x) || fourier_embed(y)``."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 2:
        raise ContractViolation("points must have 2 coordinates")
    return np.concatenate([fourier_embed(p[..., 0], l), fourier_embed(p[..., 1], l)], axis=-1)


def embed_dim(l):
    return 4 * (l + 1)


def _batched_map(F):
    F = as_tensor(F)
    if F.ndim == 3:
        return ops.reshape(F, (1,) + F.shape), True
    if F.ndim != 4:
        raise ContractViolation(f"feature map must be [c,h,w] or [B,c,h,w], got {F.shape}")
    return F, False


def global_code(F):
    """Spatial average of a feature map: ``[c,h,w] -> [c]`` or ``[B,c,h,w] -> [B,c]``."""
    F = as_tensor(F)
    if F.ndim not in (3, 4) or F.shape[-1] < 1 or F.shape[-2] < 1:
        raise ContractViolation(f"global_code needs a non-empty [.., c, h, w] map, got {F.shape}")
    return ops.mean(F, axis=(-2, -1))


def bilinear_weights(coords, h, w):
    """Dense interpolation matrix ``[..., S, h*w]`` for half-pixel-aligned lookup.

    Row ``s`` holds the (at most four) bilinear weights of point ``s`` over the
    row-major flattened ``h x w`` grid; positions beyond the outermost cell
    centers clamp to the border cells.
    """
    coords = np.asarray(coords, dtype=np.float64)
    _check_unit(coords)
    u = np.clip(coords[..., 0] * w - 0.5, 0.0, w - 1)
    v = np.clip(coords[..., 1] * h - 0.5, 0.0, h - 1)
    j0 = np.floor(u).astype(np.int64)
    i0 = np.floor(v).astype(np.int64)
    j1 = np.minimum(j0 + 1, w - 1)
    i1 = np.minimum(i0 + 1, h - 1)
    fu, fv = u - j0, v - i0
    lead = coords.shape[:-1]
    M = np.zeros(lead + (h * w,))
    rows = np.indices(lead).reshape(len(lead), -1)
    for ii, jj, wt in ((i0, j0, (1 - fv) * (1 - fu)), (i0, j1, (1 - fv) * fu),
                       (i1, j0, fv * (1 - fu)), (i1, j1, fv * fu)):
        idx = tuple(rows) + ((ii * w + jj).reshape(-1),)
        np.add.at(M, idx, wt.reshape(-1))
    return M


def local_code(F, coords):
    """Bilinear lookup of the feature map at normalized coordinates.

    ``F[c,h,w]`` with ``coords[2]`` gives ``[c]``; ``F[c,h,w]`` with
    ``coords[S,2]`` gives ``[S,c]``; ``F[B,c,h,w]`` with ``coords[B,S,2]``
    gives ``[B,S,c]``. Differentiable with respect to ``F``.
    """
    Fb, single = _batched_map(F)
    B, c, h, w = Fb.shape
    coords = np.asarray(coords, dtype=np.float64)
    scalar_point = coords.ndim == 1
    pts = coords.reshape(1, 1, 2) if scalar_point else coords
    if pts.ndim == 2:
        pts = pts[None]
    if pts.shape[0] != B:
        raise ContractViolation(f"{pts.shape[0]} point sets for {B} feature maps")
    M = bilinear_weights(pts, h, w).astype(Fb.dtype)
    cells = ops.transpose(ops.reshape(Fb, (B, c, h * w)), (0, 2, 1))
    out = ops.matmul(Tensor(M), cells)
    if scalar_point:
        return ops.reshape(out, (c,))
    if single or coords.ndim == 2:
        return ops.reshape(out, out.shape[1:])
    return out


def combined_code(F, coords):
    """Global code concatenated with the local code at every point."""
    loc = local_code(F, coords)
    glob = global_code(F)
    if loc.ndim > glob.ndim:
        glob = ops.broadcast_to(ops.reshape(glob, glob.shape[:-1] + (1, glob.shape[-1])),
                                loc.shape[:-1] + glob.shape[-1:])
    return ops.concat([glob, loc], axis=-1)


def cell_centers(h, w):
    """Normalized centers of an ``h x w`` grid in row-major order, ``[h*w, 2]``."""
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.stack([(jj.reshape(-1) + 0.5) / w, (ii.reshape(-1) + 0.5) / h], axis=-1)


def feature_tokens(F, l, positional=True):
    """Flatten a feature map into per-cell tokens.

    Tokens follow row-major cell order; with ``positional`` each token gets
    ``embed_point`` of its cell center appended, giving width ``c + 4(l+1)``.
    """
    Fb, single = _batched_map(F)
    B, c, h, w = Fb.shape
    tokens = ops.transpose(ops.reshape(Fb, (B, c, h * w)), (0, 2, 1))
    if positional:
        pos = embed_point(cell_centers(h, w), l).astype(Fb.dtype)
        tokens = ops.concat([tokens, Tensor(np.broadcast_to(pos, (B,) + pos.shape))], axis=-1)
    if single:
        return ops.reshape(tokens, tokens.shape[1:])
    return tokens


def token_dim(c, l, positional=True):
    return c + (embed_dim(l) if positional else 0)


def code_dim(kind, c):
    if kind == "combined":
        return 2 * c
    if kind in ("global", "local"):
        return c
    raise ContractViolation(f"no code vector for kind {kind!r}")


def build_conditioning(kind, F, coords, l=4, positional=True):
    """Build the conditioning input for a batch.

    ``F`` is ``[B,c,h,w]`` and ``coords`` ``[B,S,2]``. Global codes are
    replicated across the ``S`` points so every code source shares one
    decoder signature.
    """
    F = as_tensor(F)
    coords = np.asarray(coords)
    B, S = coords.shape[0], coords.shape[1]
    if kind == "global":
        g = global_code(F)
        value = ops.broadcast_to(ops.reshape(g, (B, 1, g.shape[-1])), (B, S, g.shape[-1]))
    elif kind == "local":
        value = local_code(F, coords)
    elif kind == "combined":
        value = combined_code(F, coords)
    elif kind == "tokens":
        value = feature_tokens(F, l, positional=positional)
    else:
        raise ContractViolation(f"unknown conditioning kind {kind!r}")
    return ConditioningInput(kind, value)
