"""Differentiable ops over NCHW tensors."""

from __future__ import annotations

import numpy as np

from .. import kernels
from .tensor import NonFiniteError, Tensor, as_tensor, make


def _check_4d(x: Tensor, what: str):
    if x.values.ndim != 4:
        raise ValueError(f"{what} expects an NCHW tensor, got shape {x.shape}")


def _pad(v, padding):
    if padding == 0:
        return v
    return np.pad(v, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _unpad(g, padding):
    if padding == 0:
        return g
    return g[:, :, padding:-padding, padding:-padding]


def conv2d(x: Tensor, w: Tensor, b: Tensor = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N,C,H,W) with ``w`` (O,C,kh,kw); valid unless ``padding``."""
    x, w = as_tensor(x), as_tensor(w)
    _check_4d(x, "conv2d")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels, weights expect {ci}")
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ValueError(f"conv2d: {kh}x{kw} kernel larger than {h}x{wd} input")
    xp = _pad(x.values, padding)
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1

    if kh == 1 and kw == 1 and stride == 1:
        cols = xp.reshape(n, c, ho * wo)
    else:
        cols = kernels.im2col(xp, kh, kw, stride)
    w2 = w.values.reshape(o, -1)
    out = np.matmul(w2, cols).reshape(n, o, ho, wo)
    if b is not None:
        out += b.values.reshape(1, o, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(n, o, ho * wo)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)
            if kh == 1 and kw == 1 and stride == 1:
                gxp = gcols.reshape(xp.shape)
            else:
                gxp = kernels.col2im(gcols, xp.shape, kh, kw, stride)
            gx = _unpad(gxp, padding)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make(out, parents, backward)


def depthwise_conv2d(x: Tensor, w: Tensor, padding: int = 0) -> Tensor:
    """Per-channel spatial correlation; ``w`` has shape (C, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    _check_4d(x, "depthwise_conv2d")
    if w.values.ndim != 3 or w.shape[0] != x.shape[1]:
        raise ValueError(f"depthwise weights {w.shape} do not match input {x.shape}")
    xp = _pad(x.values, padding)
    if xp.shape[2] < w.shape[1] or xp.shape[3] < w.shape[2]:
        raise ValueError("depthwise kernel larger than input")
    out = kernels.depthwise_forward(xp, w.values)

    def backward(g):
        gxp, gw = kernels.depthwise_backward(xp, w.values, g)
        return _unpad(gxp, padding), gw

    return make(out, (x, w), backward)


def separable_conv2d(x: Tensor, depthwise: Tensor, pointwise: Tensor, b: Tensor = None,
                     padding: int = 0) -> Tensor:
    """Depthwise spatial conv followed by a 1x1 conv (``pointwise``: (O, C, 1, 1))."""
    pointwise = as_tensor(pointwise)
    if pointwise.values.ndim != 4 or pointwise.shape[2:] != (1, 1):
        raise ValueError(f"pointwise weights must be (O, C, 1, 1), got {pointwise.shape}")
    return conv2d(depthwise_conv2d(x, depthwise, padding), pointwise, b)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    x = as_tensor(x)
    _check_4d(x, "maxpool2d")
    if window > x.shape[2] or window > x.shape[3]:
        raise ValueError(f"pool window {window} larger than input {x.shape[2:]}")
    out, arg = kernels.maxpool_forward(x.values, window, stride)
    in_shape = x.shape

    def backward(g):
        return (kernels.maxpool_backward(g, arg, in_shape, window, stride),)

    return make(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    x = as_tensor(x)
    _check_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.values.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return make(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.values > 0
    out = x.values * mask

    def backward(g):
        return (g * mask,)

    return make(out, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.values.reshape(shape[0], -1)

    def backward(g):
        return (g.reshape(shape),)

    return make(out, (x,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` of shape (out, in)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.values.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weights {w.shape}")
    out = x.values @ w.values.T
    if b is not None:
        out = out + b.values
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = g @ w.values if x.requires_grad else None
        gw = g.T @ x.values if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make(out, parents, backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over the batch; ``labels`` are integer class indices."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError("labels must be n integer class indices in [0, num_classes)")
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = (logsum - z[np.arange(n), labels]).mean()
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")

    def backward(g):
        p = softmax(logits.values)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)``; lets gradcheck reduce any output to a scalar."""
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=x.dtype)
    out = np.asarray((x.values * weights).sum(), dtype=x.dtype)

    def backward(g):
        return (g * weights,)

    return make(out, (x,), backward)
