"""Differentiable operations over :class:`Tensor`.

Each function computes its forward value with numpy and attaches a backward
closure.  The raw ``*_forward`` helpers are exposed for callers that only
need values (sparse oracle, metrics).
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidValueError, ShapeError
from .tensor import DTYPE, Tensor, accumulate, as_tensor


def _result(data, parents, backward):
    return Tensor(data, _parents=tuple(parents), _backward=backward)


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g)
        accumulate(b, g)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g)
        accumulate(b, -g)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def absolute(a):
    def backward(g):
        accumulate(a, g * np.sign(a.data))

    return _result(np.abs(a.data), (a,), backward)


def relu(a):
    def backward(g):
        accumulate(a, g * (a.data > 0))

    return _result(np.maximum(a.data, 0.0), (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """tanh-approximated GELU (smooth, so finite differences stay clean)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * dinner
        accumulate(a, g * d)

    return _result(out, (a,), backward)


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        accumulate(a, g * out * (1.0 - out))

    return _result(out, (a,), backward)


def tanh(a):
    out = np.tanh(a.data)

    def backward(g):
        accumulate(a, g * (1.0 - out ** 2))

    return _result(out, (a,), backward)


# -- reductions and shape ----------------------------------------------------

def total(a):
    def backward(g):
        accumulate(a, np.broadcast_to(g, a.shape))

    return _result(a.data.sum(), (a,), backward)


def mean(a):
    n = a.data.size

    def backward(g):
        accumulate(a, np.broadcast_to(g / n, a.shape))

    return _result(a.data.mean(), (a,), backward)


def reshape(a, shape):
    def backward(g):
        accumulate(a, g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    inverse = np.argsort(axes)

    def backward(g):
        accumulate(a, g.transpose(inverse))

    return _result(a.data.transpose(axes), (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            accumulate(t, piece)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take(a, index):
    """``a[index]`` for basic (slice) indexing."""
    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        accumulate(a, full)

    return _result(a.data[index], (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _result(a.data @ b.data, (a, b), backward)


# -- normalization -----------------------------------------------------------

def softmax_forward(x):
    if np.isnan(x).any():
        raise InvalidValueError("NaN in softmax input")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(logits):
    """Row-wise softmax along the last axis, max-subtracted."""
    logits = as_tensor(logits)
    out = softmax_forward(logits.data)

    def backward(g):
        accumulate(logits, out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _result(out, (logits,), backward)


def layer_norm(x, scale, offset, eps=1e-5):
    xc = x.data - x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def backward(g):
        gx = g * scale.data
        accumulate(scale, (g * xhat).reshape(-1, n).sum(axis=0))
        accumulate(offset, g.reshape(-1, n).sum(axis=0))
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        accumulate(x, dx)

    return _result(xhat * scale.data + offset.data, (x, scale, offset), backward)


# -- spatial -----------------------------------------------------------------

def _check_conv(x, w, b):
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects CxHxW input and OxCxKxK kernel, got {x.shape}, {w.shape}")
    o, c, kh, kw = w.shape
    if c != x.shape[0]:
        raise ShapeError(f"kernel expects {c} input channels, input has {x.shape[0]}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {kh}x{kw}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"bias shape {b.shape} does not match {o} output channels")


def _im2col(x, k):
    c, h, w = x.shape
    p = k // 2
    if k == 1:
        return x.reshape(c, h * w).T
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # C,H,W,K,K
    return win.transpose(1, 2, 0, 3, 4).reshape(h * w, c * k * k)


def conv2d_forward(x, w, b=None):
    """Stride-1 'same' convolution (cross-correlation) with zero padding."""
    _check_conv(x, w, b)
    o, c, k, _ = w.shape
    _, h, wd = x.shape
    out = (_im2col(x, k) @ w.reshape(o, -1).T).T.reshape(o, h, wd)
    if b is not None:
        out = out + b[:, None, None]
    return out


def conv2d(x, w, b=None):
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    _check_conv(x.data, w.data, None if b is None else b.data)
    o, c, k, _ = w.shape
    _, h, wd = x.shape
    cols = _im2col(x.data, k)
    w2 = w.data.reshape(o, -1)
    out = (cols @ w2.T).T.reshape(o, h, wd)
    if b is not None:
        out = out + b.data[:, None, None]

    def backward(g):
        g2 = g.reshape(o, h * wd)
        accumulate(w, (g2 @ cols).reshape(w.shape))
        if b is not None:
            accumulate(b, g2.sum(axis=1))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, k, k, h, wd)
            p = k // 2
            dxp = np.zeros((c, h + 2 * p, wd + 2 * p), dtype=DTYPE)
            for ky in range(k):
                for kx in range(k):
                    dxp[:, ky:ky + h, kx:kx + wd] += dcols[:, ky, kx]
            accumulate(x, dxp[:, p:p + h, p:p + wd])

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward)


def resize_matrix(n_in, n_out):
    """Linear map for 1-D resampling, half-pixel centres, clamped at edges."""
    scale = n_in / n_out
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def bilinear_resize_forward(x, out_h, out_w):
    if x.ndim != 3:
        raise ShapeError(f"bilinear_resize expects CxHxW, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError("output size must be at least 1x1")
    rh = resize_matrix(x.shape[1], out_h)
    rw = resize_matrix(x.shape[2], out_w)
    return rh @ x @ rw.T


def bilinear_resize(x, out_h, out_w):
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"bilinear_resize expects CxHxW, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError("output size must be at least 1x1")
    rh = resize_matrix(x.shape[1], out_h)
    rw = resize_matrix(x.shape[2], out_w)

    def backward(g):
        accumulate(x, rh.T @ g @ rw)

    return _result(rh @ x.data @ rw.T, (x,), backward)


def avg_pool2(x):
    """2x2 average pooling with stride 2 on a CxHxW tensor."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even dims, got {h}x{w}")
    out = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def backward(g):
        up = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
        accumulate(x, up)

    return _result(out, (x,), backward)
