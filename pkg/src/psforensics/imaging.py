"""Raster container, lossless file I/O and the crop/block/channel pipeline.

Images are held as ``(H, W, C)`` ``uint8`` numpy arrays with ``C`` in
``{1, 3}``; channel order for colour images is RGB.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

import numpy as np

PathLike = Union[str, os.PathLike]


class ImageError(Exception):
    """Base class for image I/O failures."""


class UnsupportedFormatError(ImageError):
    pass


class CorruptImageError(ImageError):
    pass


@dataclass(eq=False)
class ImageBuffer:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"expected HxWx1 or HxWx3 raster, got shape {data.shape}")
        if data.dtype != np.uint8:
            if data.size and (data.min() < 0 or data.max() > 255):
                raise ValueError("samples must lie in [0, 255]")
            if not np.all(np.equal(np.mod(data, 1), 0)):
                raise ValueError("samples must be integral")
            data = data.astype(np.uint8)
        self.data = np.ascontiguousarray(data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"ImageBuffer({self.height}x{self.width}x{self.channels})"

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.data.copy())


@dataclass
class Block:
    pixels: ImageBuffer
    origin_row: int
    origin_col: int
    parent_id: str = ""
    grid_index: tuple = field(default=(0, 0))


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (``np.round`` ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(x), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- netpbm

_PNM_WS = b" \t\r\n"


def _parse_pnm(raw: bytes, path) -> np.ndarray:
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"{path}: only binary P5/P6 netpbm is supported")
    channels = 3 if magic == b"P6" else 1
    fields = []
    pos = 2
    n = len(raw)
    while len(fields) < 3:
        while pos < n and raw[pos] in _PNM_WS:
            pos += 1
        if pos < n and raw[pos] == ord("#"):
            while pos < n and raw[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < n and raw[pos] not in _PNM_WS:
            pos += 1
        if start == pos:
            raise CorruptImageError(f"{path}: truncated header")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError:
            raise CorruptImageError(f"{path}: bad header field {raw[start:pos]!r}") from None
    if pos >= n:
        raise CorruptImageError(f"{path}: truncated header")
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} (only 8-bit supported)")
    if width <= 0 or height <= 0:
        raise CorruptImageError(f"{path}: non-positive dimensions")
    expected = width * height * channels
    payload = raw[pos:pos + expected]
    if len(payload) != expected:
        raise CorruptImageError(f"{path}: expected {expected} raster bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels).copy()


def _write_pnm(img: ImageBuffer, path) -> None:
    magic = b"P6" if img.channels == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.data.tobytes())


# ------------------------------------------------------------------- png

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _parse_png(raw: bytes, path) -> np.ndarray:
    from PIL import Image
    import io

    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)[:, :, None]
            elif mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                raise UnsupportedFormatError(f"{path}: PNG mode {mode} not supported (need 8-bit L or RGB)")
    except UnsupportedFormatError:
        raise
    except (OSError, SyntaxError, zlib.error, ValueError) as exc:
        raise CorruptImageError(f"{path}: {exc}") from exc
    return np.ascontiguousarray(arr)


def _write_png(img: ImageBuffer, path) -> None:
    from PIL import Image

    if img.channels == 1:
        im = Image.fromarray(img.data[:, :, 0], mode="L")
    else:
        im = Image.fromarray(img.data, mode="RGB")
    im.save(path, format="PNG", compress_level=1)


def load_image(path: PathLike) -> ImageBuffer:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    raw = path.read_bytes()
    if raw.startswith(_PNG_SIG):
        return ImageBuffer(_parse_png(raw, path))
    if raw[:1] == b"P" and raw[1:2] in b"1234567":
        return ImageBuffer(_parse_pnm(raw, path))
    raise UnsupportedFormatError(f"{path}: not a PNG or binary PPM/PGM file")


def save_image(img: ImageBuffer, path: PathLike) -> Path:
    """Write ``img`` losslessly. The format follows the suffix; a ``.ppm``
    suffix on a grayscale buffer is rewritten to ``.pgm`` and vice versa.
    Returns the path actually written."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm", ".pnm", ""):
        path = path.with_suffix(".ppm" if img.channels == 3 else ".pgm")
        writer = _write_pnm
    elif suffix == ".png":
        writer = _write_png
    else:
        raise UnsupportedFormatError(f"cannot write {suffix!r}; use .png, .ppm or .pgm")
    try:
        writer(img, path)
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc
    return path


# -------------------------------------------------------------- geometry


def center_crop(img: ImageBuffer, target_h: int, target_w: int) -> ImageBuffer:
    if target_h > img.height or target_w > img.width or target_h < 1 or target_w < 1:
        raise ValueError(
            f"cannot crop {img.height}x{img.width} to {target_h}x{target_w}")
    top = (img.height - target_h) // 2
    left = (img.width - target_w) // 2
    return ImageBuffer(img.data[top:top + target_h, left:left + target_w].copy())


def crop_offsets(height: int, width: int, target_h: int, target_w: int):
    return (height - target_h) // 2, (width - target_w) // 2


def extract_blocks(img: ImageBuffer, block_size: int, selection="all",
                   parent_id: str = "") -> List[Block]:
    """Tile the image into non-overlapping ``block_size`` squares.

    The tiled region is centred in the image. ``selection`` is ``"all"``,
    an ``int`` k, or ``("central", k)``; with k the k blocks whose centres
    lie nearest the image centre are kept (ties row-major), returned in
    row-major grid order.
    """
    s = int(block_size)
    if s < 1 or s > img.height or s > img.width:
        raise ValueError(f"block size {s} does not fit a {img.height}x{img.width} image")
    rows, cols = img.height // s, img.width // s
    top = (img.height - rows * s) // 2
    left = (img.width - cols * s) // 2

    cells = [(r, c) for r in range(rows) for c in range(cols)]
    k = _central_count(selection)
    if k is not None:
        if k > len(cells):
            raise ValueError(f"central({k}) requested from a {rows}x{cols} grid")
        cy, cx = img.height / 2.0, img.width / 2.0

        def dist(rc):
            r, c = rc
            by = top + r * s + s / 2.0
            bx = left + c * s + s / 2.0
            return (by - cy) ** 2 + (bx - cx) ** 2

        chosen = sorted(cells, key=lambda rc: (dist(rc), rc))[:k]
        cells = sorted(chosen)

    blocks = []
    for r, c in cells:
        y, x = top + r * s, left + c * s
        blocks.append(Block(ImageBuffer(img.data[y:y + s, x:x + s].copy()), y, x,
                            parent_id, (r, c)))
    return blocks


def _central_count(selection):
    if selection in (None, "all"):
        return None
    if isinstance(selection, int):
        return selection
    if isinstance(selection, str) and selection.startswith("central"):
        return int(selection[len("central"):].strip("()"))
    if isinstance(selection, tuple) and len(selection) == 2 and selection[0] == "central":
        return int(selection[1])
    raise ValueError(f"bad block selection {selection!r}")


def green_channel(img: ImageBuffer) -> ImageBuffer:
    if img.channels != 3:
        raise ValueError(f"green channel needs a 3-channel image, got {img.channels}")
    return ImageBuffer(img.data[:, :, 1:2].copy())
