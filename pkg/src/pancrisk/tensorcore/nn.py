"""Parameterized layers. Each registers its weights in a shared ParamStore under a path prefix."""
from __future__ import annotations

import math

import numpy as np

from .array import ConfigurationError
from .ops import batch_norm, conv3d, gelu, layer_norm, linear, matmul, softmax_rows


class Linear:
    def __init__(self, store, prefix, d_in, d_out, bias=True):
        self.weight = store.add(f"{prefix}.weight", (d_in, d_out))
        self.bias = store.add(f"{prefix}.bias", (d_out,), init="zeros") if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store, prefix, d):
        self.gamma = store.add(f"{prefix}.gamma", (d,), init="ones")
        self.beta = store.add(f"{prefix}.beta", (d,), init="zeros")

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta)


class Conv3d:
    def __init__(self, store, prefix, c_in, c_out, k, stride=1, padding=0):
        if k not in (1, 3):
            raise ConfigurationError(f"kernel size must be 1 or 3, got {k}")
        self.stride, self.padding = stride, padding
        self.weight = store.add(f"{prefix}.weight", (c_out, c_in, k, k, k),
                                fan_in=c_in * k ** 3, fan_out=c_out * k ** 3)
        self.bias = store.add(f"{prefix}.bias", (c_out,), init="zeros")

    def __call__(self, x):
        return conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm3d:
    def __init__(self, store, prefix, c):
        self.gamma = store.add(f"{prefix}.gamma", (c,), init="ones")
        self.beta = store.add(f"{prefix}.beta", (c,), init="zeros")
        self.running_mean = store.add_buffer(f"{prefix}.running_mean", np.zeros(c))
        self.running_var = store.add_buffer(f"{prefix}.running_var", np.ones(c))
        self.training = True

    def __call__(self, x):
        return batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                          training=self.training)


class MultiHeadAttention:
    """Scaled dot-product attention with ``heads`` heads over the last two axes.

    Passing the same array as ``q_in`` and ``kv_in`` gives self-attention.
    Leading axes of the inputs are treated as batch axes.
    """

    def __init__(self, store, prefix, d, heads):
        if d % heads:
            raise ConfigurationError(f"model width {d} is not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.q = Linear(store, f"{prefix}.q", d, d)
        self.k = Linear(store, f"{prefix}.k", d, d)
        self.v = Linear(store, f"{prefix}.v", d, d)
        self.o = Linear(store, f"{prefix}.o", d, d)
        self.last_weights = None

    def _split(self, x):
        *lead, L, d = x.shape
        dh = d // self.heads
        return x.reshape(tuple(lead) + (L, self.heads, dh)).swapaxes(-2, -3)

    def __call__(self, q_in, kv_in, mask=None):
        if q_in.shape[-1] != self.d or kv_in.shape[-1] != self.d:
            raise ConfigurationError(f"attention width {self.d} does not match inputs {q_in.shape}, {kv_in.shape}")
        q, k, v = self._split(self.q(q_in)), self._split(self.k(kv_in)), self._split(self.v(kv_in))
        scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.d // self.heads))
        weights = softmax_rows(scores, mask)
        self.last_weights = weights.data
        ctx = matmul(weights, v).swapaxes(-2, -3)
        *lead, L, _, _ = ctx.shape
        return self.o(ctx.reshape(tuple(lead) + (L, self.d)))


class FeedForward:
    """Pre-norm tokenwise MLP with residual: ``x + W2 gelu(W1 norm(x))``."""

    def __init__(self, store, prefix, d, hidden, norm=True):
        if hidden < 1:
            raise ConfigurationError("feed-forward hidden size must be >= 1")
        self.norm = LayerNorm(store, f"{prefix}.norm", d) if norm else None
        self.fc1 = Linear(store, f"{prefix}.fc1", d, hidden)
        self.fc2 = Linear(store, f"{prefix}.fc2", hidden, d)

    def __call__(self, x):
        h = self.norm(x) if self.norm is not None else x
        return x + self.fc2(gelu(self.fc1(h)))


class TransformerLayer:
    def __init__(self, store, prefix, d, heads, hidden):
        self.norm = LayerNorm(store, f"{prefix}.attn_norm", d)
        self.attn = MultiHeadAttention(store, f"{prefix}.attn", d, heads)
        self.ff = FeedForward(store, f"{prefix}.ff", d, hidden)

    def __call__(self, x, mask=None):
        h = self.norm(x)
        x = x + self.attn(h, h, mask)
        return self.ff(x)

