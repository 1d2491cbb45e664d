"""Parameterised print-then-scan degradation channel.

The chain runs, in order: colour transform, halftone screen, optical blur,
low-frequency gain field plus sensor noise, scale jitter, optional JPEG
re-quantisation, clamp. Each stage is skipped when its amplitude is zero,
so a profile with everything zeroed is the identity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .imaging import ImageBuffer, round_half_away, to_uint8
from .jpeg import jpeg_roundtrip
from .manipulations import bilinear_resize, filter2d, gaussian_kernel

MAX_JITTER = 0.02


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class PrinterProfile:
    name: str
    color_matrix: Tuple[Tuple[float, ...], ...] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    color_offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    halftone_amplitude: float = 0.0
    halftone_cell: int = 4
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0
    gain_field_amplitude: float = 0.0
    gain_field_cycles: Tuple[float, float] = (1.0, 1.0)
    geometric_jitter: float = 0.0
    requant_quality: Optional[int] = None

    def __post_init__(self):
        m = tuple(tuple(float(v) for v in row) for row in self.color_matrix)
        object.__setattr__(self, "color_matrix", m)
        object.__setattr__(self, "color_offset", tuple(float(v) for v in self.color_offset))
        object.__setattr__(self, "gain_field_cycles", tuple(float(v) for v in self.gain_field_cycles))
        self.validate()

    def validate(self):
        if not self.name:
            raise ProfileError("profile needs a name")
        if len(self.color_matrix) != 3 or any(len(r) != 3 for r in self.color_matrix):
            raise ProfileError("color_matrix must be 3x3")
        if len(self.color_offset) != 3:
            raise ProfileError("color_offset must have 3 entries")
        for i in range(3):
            if not 0.8 <= self.color_matrix[i][i] <= 1.2:
                raise ProfileError(f"color_matrix diagonal {self.color_matrix[i][i]} outside [0.8, 1.2]")
        for attr in ("halftone_amplitude", "blur_sigma", "noise_sigma", "gain_field_amplitude"):
            if getattr(self, attr) < 0:
                raise ProfileError(f"{attr} must be >= 0")
        if int(self.halftone_cell) != self.halftone_cell or self.halftone_cell < 2:
            raise ProfileError("halftone_cell must be an integer >= 2")
        if abs(self.geometric_jitter) > MAX_JITTER:
            raise ProfileError(f"|geometric_jitter| must be <= {MAX_JITTER}")
        if self.gain_field_amplitude >= 1:
            raise ProfileError("gain_field_amplitude must be < 1")
        if self.requant_quality is not None and not 1 <= self.requant_quality <= 100:
            raise ProfileError("requant_quality must be in [1, 100] or None")

    def differing_fields(self, other: "PrinterProfile") -> List[str]:
        return [f.name for f in dataclasses.fields(self)
                if f.name != "name" and getattr(self, f.name) != getattr(other, f.name)]

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)


def identity_profile(name: str = "identity") -> PrinterProfile:
    return PrinterProfile(name=name)


def screen_thresholds(cell: int) -> np.ndarray:
    """Clustered-dot ordered-dither matrix of period ``cell``, values in (-0.5, 0.5)."""
    ax = (np.arange(cell) + 0.5) / cell
    spot = np.cos(2 * np.pi * ax)[:, None] + np.cos(2 * np.pi * ax)[None, :]
    # rank order of the spot function; stable sort keeps it deterministic
    order = np.argsort(-spot.ravel(), kind="stable")
    ranks = np.empty(cell * cell)
    ranks[order] = np.arange(cell * cell)
    return ((ranks + 0.5) / (cell * cell) - 0.5).reshape(cell, cell)


def _halftone(x, amplitude, cell):
    h, w, c = x.shape
    t = screen_thresholds(cell)
    out = np.empty_like(x)
    for ch in range(c):
        # each ink gets its own screen phase
        shift = (ch * cell) // c
        tile = np.roll(t, (shift, 2 * shift), axis=(0, 1))
        reps = (-(-h // cell), -(-w // cell))
        screen = np.tile(tile, reps)[:h, :w]
        u = np.clip(x[:, :, ch] / 255.0, 0.0, 1.0)
        out[:, :, ch] = x[:, :, ch] + amplitude * screen * 4.0 * u * (1.0 - u)
    return out


def _gain_field(h, w, amplitude, cycles):
    fy, fx = cycles
    yy = (np.arange(h) + 0.5) / h
    xx = (np.arange(w) + 0.5) / w
    surface = np.cos(2 * np.pi * fy * yy)[:, None] * np.cos(2 * np.pi * fx * xx)[None, :]
    return 1.0 + amplitude * surface


def simulate_printscan(img: ImageBuffer, profile: PrinterProfile, seed: int = 0) -> ImageBuffer:
    if img.channels != 3:
        raise ValueError("print-scan simulation needs a 3-channel image")
    if not isinstance(profile, PrinterProfile):
        raise ProfileError(f"expected PrinterProfile, got {type(profile).__name__}")
    profile.validate()
    rng = np.random.default_rng(seed)
    h, w = img.height, img.width
    x = img.data.astype(np.float64)

    m = np.asarray(profile.color_matrix)
    off = np.asarray(profile.color_offset)
    if not (np.array_equal(m, np.eye(3)) and not off.any()):
        x = x @ m.T + off

    if profile.halftone_amplitude > 0:
        x = _halftone(x, profile.halftone_amplitude, int(profile.halftone_cell))

    if profile.blur_sigma > 0:
        size = 2 * int(np.ceil(3 * profile.blur_sigma)) + 1
        x = filter2d(x, gaussian_kernel(size, profile.blur_sigma), "reflect")

    if profile.gain_field_amplitude > 0:
        x = x * _gain_field(h, w, profile.gain_field_amplitude, profile.gain_field_cycles)[:, :, None]
    if profile.noise_sigma > 0:
        x = x + rng.normal(0.0, profile.noise_sigma, size=x.shape)

    if profile.geometric_jitter != 0:
        eps = rng.uniform(-abs(profile.geometric_jitter), abs(profile.geometric_jitter))
        sh = max(1, int(round_half_away(h * (1 + eps))))
        sw = max(1, int(round_half_away(w * (1 + eps))))
        x = bilinear_resize(bilinear_resize(x, sh, sw), h, w)

    out = ImageBuffer(to_uint8(x))
    if profile.requant_quality is not None:
        out = jpeg_roundtrip(out, int(profile.requant_quality))
    return out


def default_profiles() -> List[PrinterProfile]:
    """The three shipped profiles (sim-dell, sim-xerox1, sim-xerox2) from the packaged config."""
    from .config import load_config

    return list(load_config().profiles)
