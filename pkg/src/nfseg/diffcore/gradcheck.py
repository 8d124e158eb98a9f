from __future__ import annotations

import numpy as np

from ..errors import ContractViolation, DivergenceError
from .tensor import Tensor


def _scalar(out):
    value = float(out.data) if isinstance(out, Tensor) else float(out)
    if not np.isfinite(value):
        raise DivergenceError("non-finite value during finite-difference check")
    return value


def finite_diff_check(fn, inputs, epsilon=1e-5):
    """Compare analytic and central-difference gradients of a scalar function.

    ``fn(*inputs)`` must return a scalar Tensor built from ``inputs`` (f64
    tensors with ``requires_grad``). Inputs are perturbed in place and
    restored. Returns the maximum over all coordinates of
    ``|analytic - numeric| / max(1e-12, |analytic| + |numeric|)``.
    """
    inputs = list(inputs)
    for t in inputs:
        if not isinstance(t, Tensor) or t.dtype != np.float64:
            raise ContractViolation("finite_diff_check needs float64 Tensor inputs")
        # perturbations go through a flat view
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None

    out = fn(*inputs)
    _scalar(out)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    for g in analytic:
        if not np.isfinite(g).all():
            raise DivergenceError("non-finite analytic gradient")

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = _scalar(fn(*inputs))
            flat[i] = orig - epsilon
            f_minus = _scalar(fn(*inputs))
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * epsilon)
            err = abs(a_flat[i] - numeric) / max(1e-12, abs(a_flat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
