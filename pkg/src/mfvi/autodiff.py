"""Minimal reverse-mode autodiff over numpy arrays.

Covers exactly the operations the Gaussian-MLP training losses need:
affine layers, tanh/relu, exp, clip, column slicing/concatenation,
elementwise arithmetic, and reductions. Gradients accumulate with a fixed
traversal order, so repeated runs are bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


class Var:
    """A node in the computation graph: value, grad, and a backward closure."""

    __slots__ = ("value", "grad", "_parents", "_backward", "needs_grad")

    def __init__(self, value, parents=(), backward=None, requires_grad=True):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = parents
        self._backward = backward
        if parents:
            self.needs_grad = any(p.needs_grad for p in parents)
        else:
            self.needs_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        """Populate ``.grad`` on every upstream node. Loss must be scalar."""
        if self.value.size != 1:
            raise InvalidInputError("backward() requires a scalar loss")
        self.grad = np.ones_like(self.value)
        for node in reversed(_toposort(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; python scalars go through scale/shift so they do not
    # promote float32 graphs to float64
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, float(other))
        return add(self, _wrap(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -float(other))
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return shift(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def const(value) -> Var:
    """Leaf with no gradient (inputs, targets, frozen noise)."""
    return Var(value, requires_grad=False)


def _wrap(x):
    return x if isinstance(x, Var) else const(x)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(grad, shape):
    """Sum a gradient back down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accum(node, grad):
    if not node.needs_grad:
        return
    grad = _unbroadcast(grad, node.value.shape)
    node.grad = grad if node.grad is None else node.grad + grad


def add(a: Var, b: Var) -> Var:
    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return Var(a.value + b.value, (a, b), backward)


def sub(a: Var, b: Var) -> Var:
    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return Var(a.value - b.value, (a, b), backward)


def mul(a: Var, b: Var) -> Var:
    def backward(g):
        if a.needs_grad:
            _accum(a, g * b.value)
        if b.needs_grad:
            _accum(b, g * a.value)

    return Var(a.value * b.value, (a, b), backward)


def scale(a: Var, s: float) -> Var:
    def backward(g):
        _accum(a, g * s)

    return Var(a.value * s, (a,), backward)


def shift(a: Var, s: float) -> Var:
    def backward(g):
        _accum(a, g)

    return Var(a.value + s, (a,), backward)


def square(a: Var) -> Var:
    def backward(g):
        _accum(a, 2.0 * g * a.value)

    return Var(a.value * a.value, (a,), backward)


def exp(a: Var) -> Var:
    out_value = np.exp(a.value)

    def backward(g):
        _accum(a, g * out_value)

    return Var(out_value, (a,), backward)


def tanh(a: Var) -> Var:
    out_value = np.tanh(a.value)

    def backward(g):
        _accum(a, g * (1.0 - out_value * out_value))

    return Var(out_value, (a,), backward)


def relu(a: Var) -> Var:
    mask = a.value > 0

    def backward(g):
        _accum(a, g * mask)

    return Var(np.where(mask, a.value, 0.0), (a,), backward)


def clip(a: Var, lo: float, hi: float) -> Var:
    # Hard clamp; gradient is zero outside [lo, hi].
    inside = (a.value >= lo) & (a.value <= hi)

    def backward(g):
        _accum(a, g * inside)

    return Var(np.clip(a.value, lo, hi), (a,), backward)


def matmul(a: Var, b: Var) -> Var:
    def backward(g):
        if a.needs_grad:
            _accum(a, g @ b.value.T)
        if b.needs_grad:
            _accum(b, a.value.T @ g)

    return Var(a.value @ b.value, (a, b), backward)


def concat_cols(parts) -> Var:
    parts = [_wrap(p) for p in parts]
    widths = [p.value.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.needs_grad:
                _accum(p, g[..., lo:hi])

    return Var(np.concatenate([p.value for p in parts], axis=-1), tuple(parts), backward)


def slice_cols(a: Var, start: int, stop: int) -> Var:
    def backward(g):
        if a.needs_grad:
            full = np.zeros_like(a.value)
            full[..., start:stop] = g
            _accum(a, full)

    return Var(a.value[..., start:stop], (a,), backward)


def sum_cols(a: Var) -> Var:
    """Sum over the last axis; (B, d) -> (B,)."""

    def backward(g):
        _accum(a, np.repeat(g[..., None], a.value.shape[-1], axis=-1))

    return Var(a.value.sum(axis=-1), (a,), backward)


def mean_all(a: Var) -> Var:
    n = a.value.size

    def backward(g):
        _accum(a, np.full_like(a.value, float(g) / n))

    return Var(np.asarray(a.value.mean()), (a,), backward)


def sum_all(a: Var) -> Var:
    def backward(g):
        _accum(a, np.full_like(a.value, float(g)))

    return Var(np.asarray(a.value.sum()), (a,), backward)
