"""Minimal baseline JPEG round-trip (encode + decode without entropy coding).

Huffman coding is lossless, so skipping it changes nothing about the
decoded pixels; everything lossy is here: colour conversion, 4:2:0
subsampling, the 8x8 DCT, and quantisation with the Annex K tables.
"""

import numpy as np

from .imaging import ImageBuffer, round_half_away

LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.int64)


def _dct_matrix(n=8):
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.cos((2 * x + 1) * k * np.pi / (2 * n))
    m[0] *= np.sqrt(1.0 / n)
    m[1:] *= np.sqrt(2.0 / n)
    return m


DCT8 = _dct_matrix()


def quality_scale(quality: int) -> int:
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
    return 5000 // quality if quality < 50 else 200 - 2 * quality


def scaled_table(base: np.ndarray, quality: int) -> np.ndarray:
    scale = quality_scale(quality)
    return np.clip((base * scale + 50) // 100, 1, 255)


def rgb_to_ycbcr(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc):
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _blocks(plane):
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblocks(blocks):
    by, bx = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(by * 8, bx * 8)


def _code_plane(plane, table):
    """Level shift, DCT, quantise, dequantise, IDCT; returns samples in [0, 255]."""
    blocks = _blocks(plane - 128.0)
    coeffs = DCT8 @ blocks @ DCT8.T
    q = round_half_away(coeffs / table) * table
    rec = DCT8.T @ q @ DCT8
    return np.clip(round_half_away(_unblocks(rec) + 128.0), 0, 255)


def _pad_to(plane, mult):
    h, w = plane.shape
    ph, pw = (-h) % mult, (-w) % mult
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    return plane


def jpeg_roundtrip(img: ImageBuffer, quality: int = 70) -> ImageBuffer:
    luma_q = scaled_table(LUMA_TABLE, quality).astype(np.float64)
    chroma_q = scaled_table(CHROMA_TABLE, quality).astype(np.float64)
    h, w = img.height, img.width
    data = img.data.astype(np.float64)

    if img.channels == 1:
        y = _code_plane(_pad_to(data[:, :, 0], 8), luma_q)
        return ImageBuffer(y[:h, :w, None].astype(np.uint8))

    ycc = np.clip(round_half_away(rgb_to_ycbcr(data)), 0, 255)
    y = _code_plane(_pad_to(ycc[:, :, 0], 16), luma_q)
    chroma = []
    for c in (1, 2):
        plane = _pad_to(ycc[:, :, c], 16)
        ph, pw = plane.shape
        sub = plane.reshape(ph // 2, 2, pw // 2, 2).mean(axis=(1, 3))
        sub = _pad_to(sub, 8)
        coded = _code_plane(sub, chroma_q)[: ph // 2, : pw // 2]
        chroma.append(np.repeat(np.repeat(coded, 2, axis=0), 2, axis=1))
    out = np.stack([y, chroma[0], chroma[1]], axis=-1)[:h, :w]
    rgb = ycbcr_to_rgb(out)
    return ImageBuffer(np.clip(round_half_away(rgb), 0, 255).astype(np.uint8))
