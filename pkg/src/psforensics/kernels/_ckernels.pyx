# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``_fallback`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.string cimport memset

ctypedef fused real:
    float
    double

cnp.import_array()


def median_filter(const unsigned char[:, :, ::1] padded, int size):
    cdef Py_ssize_t ph = padded.shape[0], pw = padded.shape[1], c = padded.shape[2]
    cdef Py_ssize_t h = ph - size + 1, w = pw - size + 1
    cdef Py_ssize_t y, x, ch, i, j, v
    cdef int mid = (size * size) // 2, acc
    cdef int hist[256]
    out = np.empty((h, w, c), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] o = out
    # counting-sort median; window has at most a few dozen samples
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                memset(hist, 0, sizeof(hist))
                for i in range(size):
                    for j in range(size):
                        hist[padded[y + i, x + j, ch]] += 1
                acc = 0
                for v in range(256):
                    acc += hist[v]
                    if acc > mid:
                        o[y, x, ch] = <unsigned char>v
                        break
    return out


def im2col(real[:, :, :, ::1] x, int kh, int kw, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - kh) // stride + 1, wo = (w - kw) // stride + 1
    cdef Py_ssize_t b, ch, i, j, oy, ox, row
    dtype = np.float32 if real is float else np.float64
    cols = np.empty((n, c * kh * kw, ho * wo), dtype=dtype)
    cdef real[:, :, ::1] cv = cols
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for oy in range(ho):
                        for ox in range(wo):
                            cv[b, row, oy * wo + ox] = x[b, ch, oy * stride + i, ox * stride + j]
    return cols


def col2im(real[:, :, ::1] cols, tuple in_shape, int kh, int kw, int stride):
    cdef Py_ssize_t n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3]
    cdef Py_ssize_t ho = (h - kh) // stride + 1, wo = (w - kw) // stride + 1
    cdef Py_ssize_t b, ch, i, j, oy, ox, row
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] ov = out
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for oy in range(ho):
                        for ox in range(wo):
                            ov[b, ch, oy * stride + i, ox * stride + j] += cols[b, row, oy * wo + ox]
    return out


def depthwise_forward(real[:, :, :, ::1] x, real[:, :, ::1] w):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ho = h - kh + 1, wo = wd - kw + 1
    cdef Py_ssize_t b, ch, i, j, y, xx
    cdef real wij
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, ho, wo), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    wij = w[ch, i, j]
                    for y in range(ho):
                        for xx in range(wo):
                            o[b, ch, y, xx] += x[b, ch, y + i, xx + j] * wij
    return out


def depthwise_backward(real[:, :, :, ::1] x, real[:, :, ::1] w, real[:, :, :, ::1] gout):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    cdef Py_ssize_t b, ch, i, j, y, xx
    cdef real wij, g
    cdef double acc
    dtype = np.float32 if real is float else np.float64
    gx = np.zeros((n, c, h, wd), dtype=dtype)
    gw = np.zeros((c, kh, kw), dtype=dtype)
    cdef real[:, :, :, ::1] gxv = gx
    cdef real[:, :, ::1] gwv = gw
    for ch in range(c):
        for i in range(kh):
            for j in range(kw):
                wij = w[ch, i, j]
                acc = 0.0
                for b in range(n):
                    for y in range(ho):
                        for xx in range(wo):
                            g = gout[b, ch, y, xx]
                            acc += x[b, ch, y + i, xx + j] * g
                            gxv[b, ch, y + i, xx + j] += g * wij
                gwv[ch, i, j] = <real>acc
    return gx, gw


def maxpool_forward(real[:, :, :, ::1] x, int window, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - window) // stride + 1, wo = (w - window) // stride + 1
    cdef Py_ssize_t b, ch, oy, ox, i, j, best
    cdef real m, v
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c, ho, wo), dtype=dtype)
    arg = np.empty((n, c, ho, wo), dtype=np.intp)
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t[:, :, :, ::1] a = arg
    for b in range(n):
        for ch in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    m = x[b, ch, oy * stride, ox * stride]
                    best = 0
                    for i in range(window):
                        for j in range(window):
                            v = x[b, ch, oy * stride + i, ox * stride + j]
                            if v > m:
                                m = v
                                best = i * window + j
                    o[b, ch, oy, ox] = m
                    a[b, ch, oy, ox] = best
    return out, arg


def maxpool_backward(real[:, :, :, ::1] gout, const Py_ssize_t[:, :, :, ::1] arg,
                     tuple in_shape, int window, int stride):
    cdef Py_ssize_t n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    cdef Py_ssize_t b, ch, oy, ox, k
    dtype = np.float32 if real is float else np.float64
    gx = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] g = gx
    for b in range(n):
        for ch in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    k = arg[b, ch, oy, ox]
                    g[b, ch, oy * stride + k // window, ox * stride + k % window] += gout[b, ch, oy, ox]
    return gx
