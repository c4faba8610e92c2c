"""A small tape-free reverse-mode differentiator over numpy arrays.

Each ``Var`` keeps its parents together with a closure mapping the upstream
gradient to the gradient of every parent. ``backward`` walks the graph in
reverse topological order. Only the handful of operations the trainer needs
are provided; all of them broadcast like numpy and reduce gradients back to
the operand shapes. Called on plain arrays they return plain arrays, so one
loss function serves both differentiation and cheap numeric evaluation.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_kinks: list | None = None


@contextmanager
def record_kinks():
    """Collect the sign pattern of every ReLU and absolute value evaluated on plain arrays."""
    global _kinks
    saved, _kinks = _kinks, []
    try:
        yield _kinks
    finally:
        _kinks = saved


def _record(x) -> None:
    if _kinks is not None:
        _kinks.append(np.asarray(x) > 0)


class Var:
    __slots__ = ("value", "grad", "parents", "requires_grad")

    def __init__(self, value, parents=(), requires_grad: bool = True):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents  # tuple of (Var, backward closure)
        self.requires_grad = requires_grad or bool(parents)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self):
        """Accumulate ``d self / d leaf`` into every reachable leaf (``self`` must be a scalar)."""
        if self.value.size != 1:
            raise ValueError("backward needs a scalar output")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, fn in node.parents:
                pg = fn(g)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x, requires_grad=False)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _binary(a, b, value, ga, gb) -> Var:
    a, b = _wrap(a), _wrap(b)
    parents = []
    if a.requires_grad:
        parents.append((a, lambda g: _unbroadcast(ga(g), a.shape)))
    if b.requires_grad:
        parents.append((b, lambda g: _unbroadcast(gb(g), b.shape)))
    return Var(value, tuple(parents), requires_grad=False)


def _plain(*xs) -> bool:
    return not any(isinstance(x, Var) for x in xs)


def add(a, b):
    if _plain(a, b):
        return np.add(a, b)
    a, b = _wrap(a), _wrap(b)
    return _binary(a, b, a.value + b.value, lambda g: g, lambda g: g)


def sub(a, b):
    if _plain(a, b):
        return np.subtract(a, b)
    a, b = _wrap(a), _wrap(b)
    return _binary(a, b, a.value - b.value, lambda g: g, lambda g: -g)


def mul(a, b):
    if _plain(a, b):
        return np.multiply(a, b)
    a, b = _wrap(a), _wrap(b)
    return _binary(a, b, a.value * b.value, lambda g: g * b.value, lambda g: g * a.value)


def matmul(a, b):
    if _plain(a, b):
        return np.matmul(a, b)
    a, b = _wrap(a), _wrap(b)
    return _binary(a, b, a.value @ b.value, lambda g: g @ b.value.T, lambda g: a.value.T @ g)


def _unary(a: Var, value, local) -> Var:
    return Var(value, ((a, lambda g: g * local),) if a.requires_grad else (), requires_grad=False)


def relu(a):
    if _plain(a):
        _record(a)
        return np.maximum(a, 0.0)
    mask = (a.value > 0).astype(float)
    return _unary(a, a.value * mask, mask)


def sigmoid(a):
    if _plain(a):
        return 1.0 / (1.0 + np.exp(-np.asarray(a)))
    s = 1.0 / (1.0 + np.exp(-a.value))
    return _unary(a, s, s * (1.0 - s))


def absolute(a):
    if _plain(a):
        _record(a)
        return np.abs(a)
    return _unary(a, np.abs(a.value), np.sign(a.value))


def square(a):
    if _plain(a):
        return np.square(a)
    return _unary(a, a.value ** 2, 2.0 * a.value)


def sqrt(a):
    if _plain(a):
        return np.sqrt(a)
    r = np.sqrt(a.value)
    return _unary(a, r, 0.5 / r)


def sum_last(a):
    """Sum over the last axis, keeping it as a length-1 axis."""
    if _plain(a):
        return np.sum(a, axis=-1, keepdims=True)
    return Var(a.value.sum(axis=-1, keepdims=True),
               ((a, lambda g: np.broadcast_to(g, a.shape)),) if a.requires_grad else (), requires_grad=False)


def batch_mean(a):
    """Mean over the last two axes; leading axes of plain arrays are kept."""
    if _plain(a):
        return np.mean(a, axis=(-2, -1))
    n = a.value.size
    return Var(np.asarray(a.value.mean()),
               ((a, lambda g: np.full(a.shape, float(g) / n)),) if a.requires_grad else (), requires_grad=False)


def identity(a):
    return a


def detach(a) -> np.ndarray:
    return a.value if isinstance(a, Var) else np.asarray(a, dtype=float)
