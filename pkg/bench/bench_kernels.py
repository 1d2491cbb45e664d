"""Time each kernel in the numpy fallback and the compiled extension.

    python bench/bench_kernels.py [--repeat N]

Prints one row per kernel: best-of-N wall time for each backend and the
speed-up. Exits non-zero if the compiled extension is not built. The
implementations are called directly, so im2col is timed in both even
though the dispatcher always uses the numpy one.
"""

import argparse
import sys
import time

import numpy as np

from psforensics.kernels import _fallback


def cases(k, rng):
    img = rng.integers(0, 256, (132, 196, 3)).astype(np.uint8)
    x = rng.standard_normal((16, 32, 36, 36)).astype(np.float32)
    w = rng.standard_normal((32, 3, 3)).astype(np.float32)
    g = rng.standard_normal((16, 32, 34, 34)).astype(np.float32)
    cols = k.im2col(x, 5, 5, 1)
    pooled, arg = k.maxpool_forward(x, 3, 2)
    gp = rng.standard_normal(pooled.shape).astype(np.float32)
    return {
        "median_filter 5x5 (128x192 RGB)": lambda: k.median_filter(img, 5),
        "im2col 5x5 (16x32x36x36)": lambda: k.im2col(x, 5, 5, 1),
        "col2im 5x5": lambda: k.col2im(cols, x.shape, 5, 5, 1),
        "depthwise forward 3x3": lambda: k.depthwise_forward(x, w),
        "depthwise backward 3x3": lambda: k.depthwise_backward(x, w, g),
        "maxpool forward 3/2": lambda: k.maxpool_forward(x, 3, 2),
        "maxpool backward 3/2": lambda: k.maxpool_backward(gp, arg, x.shape, 3, 2),
    }


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    try:
        from psforensics.kernels import _ckernels
    except ImportError:
        print("compiled backend not built; run `pip install --no-build-isolation -e .`", file=sys.stderr)
        return 1
    rows = {}
    for backend, impl in (("python", _fallback), ("cython", _ckernels)):
        for name, fn in cases(impl, np.random.default_rng(args.seed)).items():
            rows.setdefault(name, {})[backend] = best_of(fn, args.repeat)
    print(f"{'kernel':36s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for name, t in rows.items():
        print(f"{name:36s} {t['python'] * 1e3:10.2f} {t['cython'] * 1e3:10.2f} {t['python'] / t['cython']:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
