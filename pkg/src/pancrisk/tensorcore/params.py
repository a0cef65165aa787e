from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .array import DiffArray


class UninitializedGradientError(RuntimeError):
    pass


@dataclass
class ParamStore:
    """Named learnable arrays plus non-learnable buffers (e.g. running statistics).

    Initial values depend only on ``rng_seed`` and the parameter path, so the
    order in which modules register parameters does not matter.
    """

    rng_seed: int = 0
    dtype: type = np.float64
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    def _rng(self, path):
        return np.random.default_rng([self.rng_seed, zlib.crc32(path.encode())])

    def add(self, path, shape, init="xavier", fan_in=None, fan_out=None):
        if path in self.params:
            raise KeyError(f"duplicate parameter path {path!r}")
        shape = tuple(int(s) for s in shape)
        if init == "xavier":
            fan_in = fan_in if fan_in is not None else shape[0]
            fan_out = fan_out if fan_out is not None else shape[-1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = self._rng(path).uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        p = DiffArray(data.astype(self.dtype), requires_grad=True)
        self.params[path] = p
        return p

    def add_buffer(self, path, value):
        if path in self.buffers:
            raise KeyError(f"duplicate buffer path {path!r}")
        self.buffers[path] = np.array(value, dtype=np.float64)
        return self.buffers[path]

    def __getitem__(self, path):
        return self.params[path]

    def __contains__(self, path):
        return path in self.params

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def count(self):
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def astype(self, dtype):
        self.dtype = dtype
        for p in self.params.values():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self

    def state(self):
        """Snapshot of all values (params and buffers) as numpy copies."""
        out = {k: p.data.copy() for k, p in self.params.items()}
        out.update({k: b.copy() for k, b in self.buffers.items()})
        return out

    def load_state(self, state):
        for k, v in state.items():
            if k in self.params:
                self.params[k].data = np.asarray(v, dtype=self.params[k].data.dtype).reshape(self.params[k].shape).copy()
            elif k in self.buffers:
                self.buffers[k][...] = v
            else:
                raise KeyError(f"unknown parameter path {k!r}")


def sgd_step(store, lr, weight_decay=0.0):
    for path, p in store.items():
        if p.grad is None:
            raise UninitializedGradientError(f"parameter {path!r} has no gradient")
        g = p.grad + weight_decay * p.data if weight_decay else p.grad
        p.data -= lr * g
    return store


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, store):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for path, p in store.items():
            if p.grad is None:
                raise UninitializedGradientError(f"parameter {path!r} has no gradient")
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            m = self.m.get(path)
            if m is None:
                m = self.m[path] = np.zeros_like(p.data)
                self.v[path] = np.zeros_like(p.data)
            v = self.v[path]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return store


def adam_step(store, optimizer):
    return optimizer.step(store)
