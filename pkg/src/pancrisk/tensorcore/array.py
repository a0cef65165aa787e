"""Reverse-mode differentiable array built on numpy.

Each operation records its parents and a backward closure; ``backward``
orders the recorded graph topologically and replays it in reverse.
"""
from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class DegenerateMaskError(ValueError):
    pass


def _unbroadcast(grad, shape):
    # sum out axes introduced or stretched by numpy broadcasting
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class DiffArray:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, parents=(), dtype=None):
        if isinstance(data, DiffArray):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = parents
        self._backward = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"DiffArray(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return DiffArray(self.data.copy())

    # -- graph plumbing ---------------------------------------------------
    @staticmethod
    def _result(data, parents, backward):
        parents = tuple(p for p in parents if isinstance(p, DiffArray))
        track = any(p.requires_grad for p in parents)
        out = DiffArray(data, requires_grad=track, parents=parents if track else ())
        if track:
            out._backward = backward
        return out

    def backward(self, grad=None):
        """Populate ``.grad`` on every requires_grad array reachable from here."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward without an explicit gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
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
        # interior nodes hold per-pass gradients; leaves accumulate across passes
        for node in order:
            if node._parents:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic ---------------------------------------------
    def __add__(self, other):
        other = _lift(other, self.dtype)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a.grad += _unbroadcast(g, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(g, b.shape)

        return DiffArray._result(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def back(g):
            a.grad -= g

        return DiffArray._result(-a.data, (a,), back)

    def __sub__(self, other):
        return self + (-_lift(other, self.dtype))

    def __rsub__(self, other):
        return _lift(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = _lift(other, self.dtype)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a.grad += _unbroadcast(g * b.data, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(g * a.data, b.shape)

        return DiffArray._result(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other, self.dtype)
        a, b = self, other
        out = a.data / b.data

        def back(g):
            if a.requires_grad:
                a.grad += _unbroadcast(g / b.data, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(-g * out / b.data, b.shape)

        return DiffArray._result(out, (a, b), back)

    def __rtruediv__(self, other):
        return _lift(other, self.dtype) / self

    def __pow__(self, p):
        a = self
        p = float(p)

        def back(g):
            a.grad += g * p * a.data ** (p - 1)

        return DiffArray._result(a.data ** p, (a,), back)

    def __matmul__(self, other):
        from .ops import matmul

        return matmul(self, other)

    def __getitem__(self, idx):
        a = self

        def back(g):
            np.add.at(a.grad, idx, g)

        return DiffArray._result(a.data[idx], (a,), back)

    # -- shape ops ----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def back(g):
            a.grad += g.reshape(a.shape)

        return DiffArray._result(a.data.reshape(shape), (a,), back)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        a = self

        def back(g):
            a.grad += g.transpose(inv)

        return DiffArray._result(a.data.transpose(axes), (a,), back)

    @property
    def T(self):
        return self.transpose()

    def swapaxes(self, i, j):
        axes = list(range(self.ndim))
        axes[i], axes[j] = axes[j], axes[i]
        return self.transpose(axes)

    # -- reductions -----------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.grad += np.broadcast_to(g, a.shape)

        return DiffArray._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- unary maths --------------------------------------------------------------
    def exp(self):
        a = self
        out = np.exp(a.data)

        def back(g):
            a.grad += g * out

        return DiffArray._result(out, (a,), back)

    def log(self):
        a = self

        def back(g):
            a.grad += g / a.data

        return DiffArray._result(np.log(a.data), (a,), back)


def _lift(x, dtype=None):
    if isinstance(x, DiffArray):
        return x
    return DiffArray(np.asarray(x, dtype=dtype))


def tensor(data, requires_grad=False, dtype=np.float64):
    return DiffArray(np.array(data, dtype=dtype), requires_grad=requires_grad)
