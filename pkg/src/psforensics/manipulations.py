"""The six global manipulation classes and their default parameters."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from . import kernels
from .imaging import ImageBuffer, center_crop, to_uint8
from .jpeg import jpeg_roundtrip


class Manipulation(str, enum.Enum):
    AWGN = "awgn"
    GB = "gb"
    JPEG = "jpeg"
    MF = "mf"
    PR = "pr"
    RS = "rs"

    def __str__(self):
        return self.value


DEFAULT_PARAMS: Dict[Manipulation, Dict[str, Any]] = {
    Manipulation.AWGN: {"sigma": 2.0},
    Manipulation.GB: {"size": 5, "sigma": 1.1},
    Manipulation.JPEG: {"quality": 70},
    Manipulation.MF: {"size": 5},
    Manipulation.PR: {},
    Manipulation.RS: {"ratio": 1.5},
}

CLASS_SETS: Dict[str, Tuple[Manipulation, ...]] = {
    "4c": (Manipulation.AWGN, Manipulation.GB, Manipulation.MF, Manipulation.PR),
    "6c": (Manipulation.AWGN, Manipulation.GB, Manipulation.JPEG,
           Manipulation.MF, Manipulation.PR, Manipulation.RS),
}


@dataclass(frozen=True)
class ManipulationKind:
    tag: Manipulation
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        tag = Manipulation(self.tag)
        object.__setattr__(self, "tag", tag)
        merged = dict(DEFAULT_PARAMS[tag])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameter(s) for {tag.value}: {sorted(unknown)}")
        merged.update(self.params)
        if "size" in merged:
            size = merged["size"]
            if isinstance(size, (tuple, list)):
                if len(set(size)) != 1:
                    raise ValueError("only square kernels are supported")
                size = size[0]
            size = int(size)
            if size < 3 or size % 2 == 0:
                raise ValueError(f"kernel size must be odd and >= 3, got {size}")
            merged["size"] = size
        object.__setattr__(self, "params", merged)

    @classmethod
    def default(cls, tag) -> "ManipulationKind":
        return cls(Manipulation(tag))

    def __hash__(self):
        return hash((self.tag, tuple(sorted(self.params.items()))))


def apply_awgn(img: ImageBuffer, sigma: float, seed: int) -> ImageBuffer:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=img.data.shape)
    return ImageBuffer(to_uint8(img.data + noise))


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    k = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def filter2d(data: np.ndarray, kernel: np.ndarray, mode: str = "reflect") -> np.ndarray:
    """Correlate every channel of an HxWxC array with a 2-D kernel (float64 result)."""
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    h, w = data.shape[:2]
    padded = np.pad(data.astype(np.float64), ((ry, ry), (rx, rx), (0, 0)), mode=mode)
    out = np.zeros(data.shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i:i + h, j:j + w]
    return out


def apply_gaussian_blur(img: ImageBuffer, size: int = 5, sigma: float = 1.1) -> ImageBuffer:
    kernel = gaussian_kernel(size, sigma)
    r = size // 2
    # numpy "reflect" needs the pad to be smaller than the image
    if r >= img.height or r >= img.width:
        raise ValueError(f"{size}x{size} kernel too large for {img.height}x{img.width} image")
    return ImageBuffer(to_uint8(filter2d(img.data, kernel, "reflect")))


def apply_median_filter(img: ImageBuffer, size: int = 5) -> ImageBuffer:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"median window must be odd, got {size}")
    r = size // 2
    padded = np.pad(img.data, ((r, r), (r, r), (0, 0)), mode="edge")
    return ImageBuffer(kernels.median_filter(padded, size))


def bilinear_resize(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an HxWxC array with half-pixel centres; float64 result."""
    h, w = data.shape[:2]
    src = data.astype(np.float64)

    def axis_coords(n_out, n_in):
        c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        c = np.clip(c, 0, n_in - 1)
        lo = np.floor(c).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, c - lo

    y0, y1, fy = axis_coords(out_h, h)
    x0, x1, fx = axis_coords(out_w, w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def apply_resample(img: ImageBuffer, ratio: float = 1.5) -> ImageBuffer:
    """Bilinear rescale by ``ratio``, then centre-crop back to the input size.

    When ``ratio < 1`` the result is smaller than the input and is returned
    uncropped.
    """
    if ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    out_h = int(np.floor(img.height * ratio + 0.5))
    out_w = int(np.floor(img.width * ratio + 0.5))
    if out_h < 1 or out_w < 1:
        raise ValueError(f"ratio {ratio} shrinks the image below one pixel")
    if (out_h, out_w) == (img.height, img.width):
        return img.copy()
    resized = ImageBuffer(to_uint8(bilinear_resize(img.data, out_h, out_w)))
    if out_h >= img.height and out_w >= img.width:
        return center_crop(resized, img.height, img.width)
    return resized


def apply_manipulation(img: ImageBuffer, kind, seed: int = 0) -> ImageBuffer:
    if not isinstance(kind, ManipulationKind):
        kind = ManipulationKind.default(kind)
    p = kind.params
    tag = kind.tag
    if tag is Manipulation.PR:
        return img.copy()
    if tag is Manipulation.AWGN:
        return apply_awgn(img, p["sigma"], seed)
    if tag is Manipulation.GB:
        return apply_gaussian_blur(img, p["size"], p["sigma"])
    if tag is Manipulation.MF:
        return apply_median_filter(img, p["size"])
    if tag is Manipulation.RS:
        return apply_resample(img, p["ratio"])
    if tag is Manipulation.JPEG:
        return jpeg_roundtrip(img, p["quality"])
    raise ValueError(f"unhandled manipulation {tag}")
