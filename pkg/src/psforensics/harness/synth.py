"""Structured synthetic "photos" so experiments need no external corpus.

Each image layers a smooth colour field, a few anti-aliased shapes and
band-limited texture, then a faint correlated grain, all in 8-bit RGB.
"""

from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np

from ..imaging import ImageBuffer, save_image, to_uint8
from ..manipulations import bilinear_resize, filter2d, gaussian_kernel


def _smooth_field(rng, h, w, coarse=4):
    grid = rng.uniform(0, 1, size=(coarse, coarse, 3))
    return bilinear_resize(grid, h, w)


def _texture(rng, h, w, sigma):
    noise = rng.standard_normal((h, w, 1))
    size = 2 * int(np.ceil(3 * sigma)) + 1
    tex = filter2d(noise, gaussian_kernel(size, sigma), "reflect")
    return tex / (tex.std() + 1e-9)


def _shape_mask(rng, h, w):
    """Soft-edged ellipse or rectangle coverage in [0, 1]."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    ry, rx = rng.uniform(0.08, 0.35) * h, rng.uniform(0.08, 0.35) * w
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / rx
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / ry
    if rng.uniform() < 0.5:
        d = (np.sqrt(u ** 2 + v ** 2) - 1.0) * min(rx, ry)
    else:
        d = (np.maximum(np.abs(u), np.abs(v)) - 1.0) * min(rx, ry)
    softness = rng.uniform(0.5, 1.5)
    return np.clip(0.5 - d / softness, 0.0, 1.0)


def synth_photo(height: int, width: int, seed: int) -> ImageBuffer:
    rng = np.random.default_rng(seed)
    img = 40 + 170 * _smooth_field(rng, height, width, coarse=int(rng.integers(2, 6)))
    for _ in range(int(rng.integers(3, 8))):
        mask = _shape_mask(rng, height, width)[:, :, None]
        colour = rng.uniform(20, 235, size=3)
        shade = colour * (0.85 + 0.3 * _smooth_field(rng, height, width, 3))
        img = img * (1 - mask) + shade * mask
    # region-varying texture amplitude, as in foliage vs sky
    amp = 1.0 + 9.0 * _smooth_field(rng, height, width, 3)[:, :, :1]
    img = img + amp * _texture(rng, height, width, rng.uniform(0.8, 2.0))
    img = img + 0.6 * _texture(rng, height, width, 0.6) * rng.uniform(0.5, 1.0, size=3)
    return ImageBuffer(to_uint8(img))


def write_corpus(out_dir, count: int, height: int = 144, width: int = 208,
                 seed: int = 0) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        paths.append(save_image(synth_photo(height, width, seed * 100003 + i),
                                out / f"img{i:04d}.png"))
    return paths
