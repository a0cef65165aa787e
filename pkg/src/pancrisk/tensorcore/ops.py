"""Differentiable primitives: matmul, masked softmax, conv3d, pooling, norms, activations."""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .array import ConfigurationError, DegenerateMaskError, DiffArray, DimensionError, _lift, _unbroadcast

LEAKY_SLOPE = 0.01
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        if a.requires_grad:
            a.grad += _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return DiffArray._result(out, (a, b), back)


def softmax_rows(x, mask=None):
    """Softmax over the last axis; ``mask`` is an additive array of 0 / -inf."""
    x = _lift(x)
    z = x.data
    if mask is not None:
        m = mask.data if isinstance(mask, DiffArray) else np.asarray(mask)
        bad = ~((m == 0) | np.isneginf(m))
        if bad.any():
            raise ValueError("mask entries must be 0 or -inf")
        if np.isneginf(m).all(axis=-1).any():
            raise DegenerateMaskError("mask leaves a row with no unmasked entries")
        z = z + m.astype(z.dtype, copy=False)
    zmax = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        x.grad += s * (g - (g * s).sum(axis=-1, keepdims=True))

    return DiffArray._result(s, (x,), back)


def concat(arrays, axis=0):
    arrays = [_lift(a) for a in arrays]
    out = np.concatenate([a.data for a in arrays], axis=axis)
    bounds = np.cumsum([0] + [a.shape[axis] for a in arrays])

    def back(g):
        for a, lo, hi in zip(arrays, bounds[:-1], bounds[1:]):
            if a.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                a.grad += g[tuple(sl)]

    return DiffArray._result(out, arrays, back)


def stack(arrays, axis=0):
    arrays = [_lift(a) for a in arrays]
    return concat([a.reshape(a.shape[:axis] + (1,) + a.shape[axis:]) for a in arrays], axis=axis)


def leaky_relu(x, slope=LEAKY_SLOPE):
    x = _lift(x)
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def back(g):
        x.grad += np.where(pos, g, slope * g)

    return DiffArray._result(out, (x,), back)


def gelu(x):
    x = _lift(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data ** 2)
        x.grad += g * (cdf + x.data * pdf)

    return DiffArray._result(out, (x,), back)


def sigmoid(x):
    x = _lift(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def back(g):
        x.grad += g * out * (1.0 - out)

    return DiffArray._result(out, (x,), back)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with weight stored as (in, out)."""
    y = matmul(x, weight)
    return y + bias if bias is not None else y


def layer_norm(x, gamma, beta, eps=1e-5):
    x = _lift(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def back(g):
        x.grad += inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))

    normed = DiffArray._result(xhat, (x,), back)
    return normed * gamma + beta


def batch_norm(x, gamma, beta, running_mean=None, running_var=None, training=True,
               momentum=0.1, eps=1e-5):
    """Per-channel normalization of a (B, C, ...) array.

    In training mode the batch statistics are used and the running buffers
    (plain numpy arrays) are updated in place; otherwise the buffers are used.
    """
    x = _lift(x)
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = ((x.data - mu) ** 2).mean(axis=axes, keepdims=True)
        if running_mean is not None:
            n = x.data.size / x.shape[1]
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(-1)
            running_var *= 1.0 - momentum
            running_var += momentum * var.reshape(-1) * (n / max(n - 1.0, 1.0))
    else:
        mu = running_mean.reshape(bshape).astype(x.dtype)
        var = running_var.reshape(bshape).astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def back(g):
        if training:
            x.grad += inv * (g - g.mean(axis=axes, keepdims=True)
                             - xhat * (g * xhat).mean(axis=axes, keepdims=True))
        else:
            x.grad += g * inv

    normed = DiffArray._result(xhat, (x,), back)
    return normed * gamma.reshape(bshape) + beta.reshape(bshape)


def _conv_out(n, k, stride, padding):
    span = n + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"conv3d output size ({n} + 2*{padding} - {k})/{stride} + 1 is not a positive integer"
        )
    return span // stride + 1


def conv3d(x, kernel, bias=None, stride=1, padding=0):
    """3D cross-correlation of (C_in, H, W, D) or (B, C_in, H, W, D) input."""
    x, kernel = _lift(x), _lift(kernel)
    unbatched = x.ndim == 4
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 5 or kernel.ndim != 5:
        raise DimensionError(f"conv3d expects 4D/5D input and 5D kernel, got {x.shape} and {kernel.shape}")
    B, cin, H, W, D = xd.shape
    cout, kcin, k, k2, k3 = kernel.shape
    if kcin != cin or not (k == k2 == k3):
        raise DimensionError(f"conv3d kernel {kernel.shape} incompatible with input {x.shape}")
    oh, ow, od = (_conv_out(n, k, stride, padding) for n in (H, W, D))
    xp = np.pad(xd, ((0, 0), (0, 0)) + ((padding, padding),) * 3) if padding else xd
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride][:, :, :oh, :ow, :od]
    # columns: (B, oh, ow, od, cin*k^3)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(B * oh * ow * od, cin * k ** 3)
    wmat = kernel.data.reshape(cout, -1)
    out = (cols @ wmat.T).reshape(B, oh, ow, od, cout).transpose(0, 4, 1, 2, 3)
    if bias is not None:
        bias = _lift(bias)
        out = out + bias.data.reshape(1, cout, 1, 1, 1)
    if unbatched:
        out = out[0]
    out = np.ascontiguousarray(out)

    def back(g):
        g5 = g[None] if unbatched else g
        gmat = g5.transpose(0, 2, 3, 4, 1).reshape(-1, cout)
        if kernel.requires_grad:
            kernel.grad += (gmat.T @ cols).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            bias.grad += gmat.sum(axis=0)
        if x.requires_grad:
            # (k, k, k, B, cin, oh, ow, od) so each scatter reads a contiguous block
            dcols = np.ascontiguousarray(
                (gmat @ wmat).reshape(B, oh, ow, od, cin, k, k, k).transpose(5, 6, 7, 0, 4, 1, 2, 3))
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    for l in range(k):
                        dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride,
                            l:l + stride * od:stride] += dcols[i, j, l]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding, padding:-padding]
            x.grad += dxp[0] if unbatched else dxp

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return DiffArray._result(out, parents, back)


def avg_pool3d(x, factor):
    """Non-overlapping average pooling over the last three axes."""
    x = _lift(x)
    *lead, H, W, D = x.shape
    if H % factor or W % factor or D % factor:
        raise ConfigurationError(f"avg_pool3d factor {factor} does not divide {x.shape[-3:]}")
    shape = tuple(lead) + (H // factor, factor, W // factor, factor, D // factor, factor)
    n = len(lead)
    return x.reshape(shape).mean(axis=(n + 1, n + 3, n + 5))


def numpy_avg_pool3d(a, factor):
    *lead, H, W, D = a.shape
    shape = tuple(lead) + (H // factor, factor, W // factor, factor, D // factor, factor)
    n = len(lead)
    return a.reshape(shape).mean(axis=(n + 1, n + 3, n + 5))
