"""Minimal reverse-mode automatic differentiation over numpy arrays.

Each op builds a node holding its inputs and a closure that maps the
output gradient to input gradients; ``backward()`` walks the graph once in
reverse topological order. Broadcasting follows numpy; gradients are
summed back over broadcast axes. This is all the machinery the graph
models need, so there are no views, no in-place ops, and no higher-order
derivatives.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError


class Tensor:
    """A value in the computation graph with an accumulated gradient."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    # -- graph walk ------------------------------------------------------

    def backward(self) -> None:
        if self.value.size != 1:
            raise ShapeMismatchError("backward() expects a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, grad in zip(node._parents, node._backward(node.grad)):
                if grad is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad = parent.grad + grad

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        return Tensor(self.value + other.value, (self, other),
                      lambda g: (_unbroadcast(g, self.value.shape),
                                 _unbroadcast(g, other.value.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __mul__(self, other):
        other = _wrap(other)
        return Tensor(self.value * other.value, (self, other),
                      lambda g: (_unbroadcast(g * other.value, self.value.shape),
                                 _unbroadcast(g * self.value, other.value.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)

        def grads(g):
            return (_unbroadcast(g / other.value, self.value.shape),
                    _unbroadcast(-g * self.value / other.value ** 2,
                                 other.value.shape))

        return Tensor(self.value / other.value, (self, other), grads)

    def __matmul__(self, other):
        other = _wrap(other)
        if self.value.ndim != 2 or other.value.ndim != 2:
            raise ShapeMismatchError("matmul expects 2-D operands")
        if self.value.shape[1] != other.value.shape[0]:
            raise ShapeMismatchError(
                f"matmul shapes {self.value.shape} x {other.value.shape}")
        return Tensor(self.value @ other.value, (self, other),
                      lambda g: (g @ other.value.T, self.value.T @ g))

    # -- shaping -----------------------------------------------------------

    def reshape(self, *shape):
        old = self.value.shape
        return Tensor(self.value.reshape(*shape), (self,),
                      lambda g: (g.reshape(old),))

    def sum(self, axis=None, keepdims=False):
        def grads(g):
            if axis is None:
                return (np.broadcast_to(g, self.value.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.value.shape).copy(),)

        return Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,), grads)

    def mean(self, axis=None, keepdims=False):
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grads(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([t.value for t in tensors], axis=axis),
                  tuple(tensors), grads)


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    mask = (x.value > 0).astype(float)
    return Tensor(x.value * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    x = _wrap(x)
    slope = np.where(x.value > 0, 1.0, alpha)
    return Tensor(x.value * slope, (x,), lambda g: (g * slope,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    x = _wrap(x)
    neg = alpha * (np.exp(np.minimum(x.value, 0.0)) - 1.0)
    out = np.where(x.value > 0, x.value, neg)
    slope = np.where(x.value > 0, 1.0, neg + alpha)
    return Tensor(out, (x,), lambda g: (g * slope,))


def sigmoid(x: Tensor) -> Tensor:
    x = _wrap(x)
    s = np.where(x.value >= 0,
                 1.0 / (1.0 + np.exp(-np.abs(x.value))),
                 np.exp(-np.abs(x.value)) / (1.0 + np.exp(-np.abs(x.value))))
    return Tensor(s, (x,), lambda g: (g * s * (1.0 - s),))


def softplus(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = np.maximum(x.value, 0.0) + np.log1p(np.exp(-np.abs(x.value)))
    s = np.where(x.value >= 0,
                 1.0 / (1.0 + np.exp(-np.abs(x.value))),
                 np.exp(-np.abs(x.value)) / (1.0 + np.exp(-np.abs(x.value))))
    return Tensor(out, (x,), lambda g: (g * s,))


def exp(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = np.exp(x.value)
    return Tensor(out, (x,), lambda g: (g * out,))


def log1p(x: Tensor) -> Tensor:
    x = _wrap(x)
    return Tensor(np.log1p(x.value), (x,), lambda g: (g / (1.0 + x.value),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; pass rng=None to disable (evaluation mode)."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    return x * keep
