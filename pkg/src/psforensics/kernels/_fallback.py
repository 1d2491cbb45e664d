"""Pure-numpy implementations of the hot kernels.

Same signatures and results as the compiled ``_ckernels`` module; used
when the extension is not built or ``PSFORENSICS_PURE=1`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def median_filter(padded, size):
    """Median over ``size``x``size`` windows of an already padded HxWxC uint8 array."""
    win = sliding_window_view(padded, (size, size), axis=(0, 1))
    h, w, c = win.shape[:3]
    flat = win.reshape(h, w, c, size * size)
    mid = (size * size) // 2
    return np.partition(flat, mid, axis=-1)[..., mid].astype(np.uint8)


def im2col(x, kh, kw, stride):
    """(N, C, H, W) -> (N, C*kh*kw, Ho*Wo) patch matrix."""
    n, c, h, w = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # (N, C, Ho, Wo, kh, kw) -> (N, C, kh, kw, Ho, Wo)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols)


def col2im(cols, in_shape, kh, kw, stride):
    n, c, h, w = in_shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros(in_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return out


def depthwise_forward(x, w):
    """Per-channel valid cross-correlation, stride 1. x: (N,C,H,W), w: (C,kh,kw)."""
    n, c, h, wd = x.shape
    _, kh, kw = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += x[:, :, i:i + ho, j:j + wo] * w[None, :, i, j, None, None]
    return out


def depthwise_backward(x, w, gout):
    n, c, h, wd = x.shape
    _, kh, kw = w.shape
    ho, wo = gout.shape[2], gout.shape[3]
    gx = np.zeros_like(x)
    gw = np.empty_like(w)
    for i in range(kh):
        for j in range(kw):
            gw[:, i, j] = np.einsum("nchw,nchw->c", x[:, :, i:i + ho, j:j + wo], gout)
            gx[:, :, i:i + ho, j:j + wo] += gout * w[None, :, i, j, None, None]
    return gx, gw


def maxpool_forward(x, window, stride):
    """Returns pooled output and the flat in-window argmax of each output cell."""
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    flat = win.reshape(n, c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.intp)


def maxpool_backward(gout, arg, in_shape, window, stride):
    n, c, h, w = in_shape
    ho, wo = gout.shape[2], gout.shape[3]
    gx = np.zeros(in_shape, dtype=gout.dtype)
    di, dj = np.divmod(arg, window)
    rows = np.arange(ho)[:, None] * stride + di
    cols = np.arange(wo)[None, :] * stride + dj
    nn_, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    index = (nn_[:, :, None, None], cc[:, :, None, None], rows, cols)
    if stride >= window:
        gx[index] = gout  # windows are disjoint, no collisions
    else:
        np.add.at(gx, index, gout)
    return gx
