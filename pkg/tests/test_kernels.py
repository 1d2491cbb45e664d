"""The compiled and numpy backends must agree; both are checked against naive loops."""

import numpy as np
import pytest

from psforensics.kernels import _fallback

try:
    from psforensics.kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [pytest.param(_fallback, id="python"),
            pytest.param(_ckernels, id="cython",
                         marks=pytest.mark.skipif(_ckernels is None, reason="extension not built"))]


def naive_depthwise(x, w):
    n, c, h, wd = x.shape
    kh, kw = w.shape[1:]
    out = np.zeros((n, c, h - kh + 1, wd - kw + 1))
    for i in range(out.shape[2]):
        for j in range(out.shape[3]):
            out[:, :, i, j] = (x[:, :, i:i + kh, j:j + kw] * w[None]).sum(axis=(2, 3))
    return out


def naive_pool(x, k, s):
    n, c, h, w = x.shape
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    out = np.empty((n, c, ho, wo))
    for i in range(ho):
        for j in range(wo):
            out[:, :, i, j] = x[:, :, i * s:i * s + k, j * s:j * s + k].max(axis=(2, 3))
    return out


@pytest.mark.parametrize("impl", BACKENDS)
@pytest.mark.parametrize("size", [3, 5])
def test_median(impl, size, rng):
    data = rng.integers(0, 256, size=(12 + size - 1, 10 + size - 1, 3), dtype=np.uint8)
    got = impl.median_filter(data, size)
    want = np.median(np.lib.stride_tricks.sliding_window_view(data, (size, size), axis=(0, 1)),
                     axis=(-2, -1)).astype(np.uint8)
    assert np.array_equal(got, want)


@pytest.mark.parametrize("impl", BACKENDS)
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_im2col_col2im(impl, stride, dtype, rng):
    x = rng.standard_normal((2, 3, 9, 8)).astype(dtype)
    cols = impl.im2col(x, 3, 2, stride)
    ref = _fallback.im2col(x, 3, 2, stride)
    assert cols.dtype == dtype and np.array_equal(cols, ref)
    # col2im is the adjoint of im2col: <im2col(x), y> == <x, col2im(y)>
    y = rng.standard_normal(cols.shape).astype(dtype)
    back = impl.col2im(y, x.shape, 3, 2, stride)
    assert np.isclose(np.vdot(cols.astype(float), y), np.vdot(x.astype(float), back), rtol=1e-5)


@pytest.mark.parametrize("impl", BACKENDS)
def test_depthwise(impl, rng):
    x = rng.standard_normal((2, 4, 7, 6))
    w = rng.standard_normal((4, 3, 3))
    out = impl.depthwise_forward(x, w)
    assert np.allclose(out, naive_depthwise(x, w), atol=1e-12)
    g = rng.standard_normal(out.shape)
    gx, gw = impl.depthwise_backward(x, w, g)
    # adjoint identities for both inputs
    dx = rng.standard_normal(x.shape)
    dw = rng.standard_normal(w.shape)
    assert np.isclose(np.vdot(gx, dx), np.vdot(g, naive_depthwise(dx, w)))
    assert np.isclose(np.vdot(gw, dw), np.vdot(g, naive_depthwise(x, dw)))


@pytest.mark.parametrize("impl", BACKENDS)
@pytest.mark.parametrize("k,s", [(2, 2), (3, 2), (3, 1)])
def test_maxpool(impl, k, s, rng):
    x = rng.permutation(2 * 3 * 9 * 9).reshape(2, 3, 9, 9).astype(np.float64)
    out, arg = impl.maxpool_forward(x, k, s)
    assert np.array_equal(out, naive_pool(x, k, s))
    g = rng.standard_normal(out.shape)
    gx = impl.maxpool_backward(g, arg, x.shape, k, s)
    # each output routes its gradient to exactly the argmax input
    ref = np.zeros_like(x)
    for n in range(2):
        for c in range(3):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    win = x[n, c, i * s:i * s + k, j * s:j * s + k]
                    r, q = np.unravel_index(np.argmax(win), win.shape)
                    ref[n, c, i * s + r, j * s + q] += g[n, c, i, j]
    assert np.allclose(gx, ref)


@pytest.mark.skipif(_ckernels is None, reason="extension not built")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_agree_float(dtype, rng):
    x = rng.standard_normal((3, 5, 11, 10)).astype(dtype)
    w = rng.standard_normal((5, 3, 3)).astype(dtype)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    a = _fallback.depthwise_forward(x, w)
    b = _ckernels.depthwise_forward(x, w)
    assert a.dtype == b.dtype == dtype
    assert np.allclose(a, b, rtol=tol, atol=tol)
    g = rng.standard_normal(a.shape).astype(dtype)
    for u, v in zip(_fallback.depthwise_backward(x, w, g), _ckernels.depthwise_backward(x, w, g)):
        assert np.allclose(u, v, rtol=10 * tol, atol=10 * tol)
    pa, ia = _fallback.maxpool_forward(x, 2, 2)
    pb, ib = _ckernels.maxpool_forward(x, 2, 2)
    assert np.array_equal(pa, pb) and np.array_equal(ia, ib)


def test_backend_switch():
    import psforensics.kernels as k

    before = k.BACKEND
    k.use_backend("python")
    assert k.BACKEND == "python"
    if _ckernels is not None:
        k.use_backend("cython")
        assert k.BACKEND == "cython"
    with pytest.raises(ValueError):
        k.use_backend("fortran")
    k.use_backend(before)
