"""Hot inner loops, compiled when available.

The Cython extension ``_ckernels`` is preferred; if it is missing or the
environment sets ``PSFORENSICS_PURE=1`` the numpy fallback is used. Both
backends agree exactly on integer kernels and to float rounding elsewhere
(see ``tests/test_kernels.py``).
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("PSFORENSICS_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def _c(a):
    return np.ascontiguousarray(a)


def median_filter(padded, size):
    return _impl.median_filter(_c(padded), int(size))


def im2col(x, kh, kw, stride=1):
    # numpy's strided-view copy beats the compiled loop (see bench/bench_kernels.py)
    return _fallback.im2col(_c(x), int(kh), int(kw), int(stride))


def col2im(cols, in_shape, kh, kw, stride=1):
    return _impl.col2im(_c(cols), tuple(int(s) for s in in_shape), int(kh), int(kw), int(stride))


def depthwise_forward(x, w):
    return _impl.depthwise_forward(_c(x), _c(w))


def depthwise_backward(x, w, gout):
    return _impl.depthwise_backward(_c(x), _c(w), _c(gout))


def maxpool_forward(x, window, stride):
    return _impl.maxpool_forward(_c(x), int(window), int(stride))


def maxpool_backward(gout, arg, in_shape, window, stride):
    return _impl.maxpool_backward(_c(gout), _c(arg), tuple(int(s) for s in in_shape),
                                  int(window), int(stride))


def use_backend(name):
    """Switch backend at runtime (``"python"`` or ``"cython"``); used by the benchmark."""
    global _impl, BACKEND
    if name == "python":
        _impl, BACKEND = _fallback, "python"
    elif name == "cython":
        from . import _ckernels

        _impl, BACKEND = _ckernels, "cython"
    else:
        raise ValueError(f"unknown backend {name!r}")
