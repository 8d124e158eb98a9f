"""Array container with a reverse-mode gradient tape.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a pullback closure. Calling :meth:`Tensor.backward` on a
scalar walks the recorded graph in reverse topological order and accumulates
``grad`` on every tensor that requires it.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ContractViolation, DivergenceError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_pullback")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            if dtype is not None:
                raise ContractViolation(f"unsupported tensor dtype {arr.dtype}")
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._pullback = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def is_finite(self):
        return bool(np.isfinite(self.data).all())

    def check_finite(self, where=None):
        if not self.is_finite():
            raise DivergenceError(f"non-finite values in {where or self.name or 'tensor'}",
                                  where=where or self.name)
        return self

    def detach(self):
        return Tensor(self.data)

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into every upstream leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ContractViolation("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise ContractViolation(f"seed gradient shape {grad.shape} != {self.shape}")

        order = _topological(self)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._pullback is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            if node.requires_grad and node.name is not None:
                # named intermediates keep their gradient for inspection
                node.grad = g if node.grad is None else node.grad + g
            parent_grads = node._pullback(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg

    # operator sugar; the functional forms live in ops.py
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from .ops import add, mul
        return add(self, mul(as_tensor(other, self.dtype), -1.0))

    def __neg__(self):
        from .ops import mul
        return mul(self, -1.0)

    def sum(self):
        from .ops import sum_all
        return sum_all(self)

    def reshape(self, *shape):
        from .ops import reshape
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def parameter(data, name=None, dtype=None):
    return Tensor(np.array(data, dtype=dtype), requires_grad=True, name=name)


_RECORDING = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    prev = _RECORDING[0]
    _RECORDING[0] = False
    try:
        yield
    finally:
        _RECORDING[0] = prev


def make_result(data, parents, pullback):
    """Wrap ``data`` as the output of a differentiable op.

    ``pullback(g)`` must return one gradient (or None) per parent.
    """
    parents = tuple(parents)
    out = Tensor(data)
    if _RECORDING[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._pullback = pullback
    return out
