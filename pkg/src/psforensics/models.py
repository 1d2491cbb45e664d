"""Desk-scale builders for the three compared detectors.

``proposed``: constrained 5x5 conv, one plain conv, K separable convs in
four groups with a max-pool after the plain conv and after each of the
first three groups, global average pool, fully connected output.
``xception_mini`` is the same topology with a plain first conv.
``bayar2016`` is the shallow constrained network on the green plane.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np

from .imaging import Block, ImageBuffer
from .nn import (
    ConstrainedConv2d,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    ReLU,
    Scale,
    SeparableConv2d,
    Sequential,
)
from .nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn.functional import softmax

FAMILIES = ("bayar2016", "xception_mini", "proposed")

# full-size channel widths; width_scale multiplies these
FULL_SEPARABLE_LAYERS = 34
FULL_WIDTHS = {
    "first": 32,        # constrained (or plain) 5x5 layer of the deep models
    "conv": 64,         # plain conv following it
    "stages": (128, 256, 512, 1024),  # separable groups, doubling at each pool
}
BAYAR_WIDTHS = {"constrained": 3, "conv1": 96, "conv2": 64, "fc": 4096}

# raw 8-bit samples are centred and scaled before the first layer
INPUT_SHIFT = 127.5
INPUT_SCALE = 1.0 / 16.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    family: str = "proposed"
    num_classes: int = 4
    input_size: int = 64
    input_channels: int = 3
    depth_scale: float = 0.25
    width_scale: float = 0.25

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        if self.num_classes < 2:
            # 4 and 6 for manipulation classes; printer identification uses one per profile
            raise ConfigError("num_classes must be at least 2")
        want = 1 if self.family == "bayar2016" else 3
        if self.input_channels != want:
            raise ConfigError(f"{self.family} needs input_channels={want}")
        if self.width_scale <= 0 or self.depth_scale <= 0:
            raise ConfigError("scales must be positive")

    @classmethod
    def for_family(cls, family: str, **kw) -> "ModelConfig":
        kw.setdefault("input_channels", 1 if family == "bayar2016" else 3)
        return cls(family=family, **kw)

    def to_dict(self) -> Dict:
        return asdict(self)


class Detector(Sequential):
    """A built network plus the config it was built from."""

    def __init__(self, cfg: ModelConfig, *layers):
        super().__init__(*layers)
        self.cfg = cfg

    @property
    def dtype(self):
        return self.parameters()[0].dtype

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=self.dtype)).values


def _w(n, scale):
    return max(1, int(round(n * scale)))


def separable_count(cfg: ModelConfig) -> int:
    return int(round(FULL_SEPARABLE_LAYERS * cfg.depth_scale))


def group_sizes(k: int) -> Tuple[int, ...]:
    """Split k separable layers into four groups: pools fall after every
    ceil(k/4) layers, or, when that leaves the last group empty, the layers
    are spread as evenly as possible (earlier groups take the remainder)."""
    if k < 4:
        raise ConfigError(f"{k} separable layers cannot fill four groups")
    step = math.ceil(k / 4)
    if k - 3 * step >= 1:
        return (step, step, step, k - 3 * step)
    base, extra = divmod(k, 4)
    return tuple(base + (1 if g < extra else 0) for g in range(4))


def _deep(cfg: ModelConfig, constrained: bool, rng, dtype) -> Detector:
    k = separable_count(cfg)
    if k < 4:
        raise ConfigError(f"depth_scale {cfg.depth_scale} gives {k} separable layers (< 4)")
    first = _w(FULL_WIDTHS["first"], cfg.width_scale)
    conv = _w(FULL_WIDTHS["conv"], cfg.width_scale)
    stages = [_w(s, cfg.width_scale) for s in FULL_WIDTHS["stages"]]
    if constrained:
        head = ConstrainedConv2d(cfg.input_channels, first, 5, rng=rng, dtype=dtype)
    else:
        head = Conv2d(cfg.input_channels, first, 5, rng=rng, dtype=dtype)
    layers = [Scale(INPUT_SCALE, INPUT_SHIFT), head, ReLU(),
              Conv2d(first, conv, 3, rng=rng, dtype=dtype), ReLU(), MaxPool2d(2, 2)]
    ch = conv
    for g, size in enumerate(group_sizes(k)):
        for _ in range(size):
            layers += [SeparableConv2d(ch, stages[g], 3, padding=1, rng=rng, dtype=dtype), ReLU()]
            ch = stages[g]
        if g < 3:
            layers.append(MaxPool2d(2, 2))
    layers += [GlobalAvgPool(), Linear(ch, cfg.num_classes, rng=rng, dtype=dtype, gain=1.0)]
    model = Detector(cfg, *layers)
    _check_geometry(model, cfg)
    return model


def _check_geometry(model: Detector, cfg: ModelConfig):
    size = cfg.input_size
    for layer in model.layers:
        if isinstance(layer, (Conv2d,)):
            size = (size + 2 * layer.padding - layer.kernel) // layer.stride + 1
        elif isinstance(layer, MaxPool2d):
            size = (size - layer.window) // layer.stride + 1
        if size < 1:
            raise ConfigError(f"input_size {cfg.input_size} too small for {cfg.family}")


def build_proposed(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Detector:
    if cfg.family != "proposed":
        raise ConfigError(f"build_proposed got family {cfg.family!r}")
    return _deep(cfg, True, np.random.default_rng(seed), dtype)


def build_xception_mini(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Detector:
    if cfg.family != "xception_mini":
        raise ConfigError(f"build_xception_mini got family {cfg.family!r}")
    return _deep(cfg, False, np.random.default_rng(seed), dtype)


def bayar_flat_size(cfg: ModelConfig) -> int:
    s = cfg.input_size - 4          # constrained 5x5
    s = (s - 7) // 2 + 1            # conv 7x7 stride 2
    s = (s - 3) // 2 + 1            # max-pool 3/2
    s = s - 4                       # conv 5x5
    s = (s - 3) // 2 + 1            # max-pool 3/2
    if s < 1:
        raise ConfigError(f"input_size {cfg.input_size} too small for bayar2016")
    return _w(BAYAR_WIDTHS["conv2"], cfg.width_scale) * s * s


def build_bayar(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Detector:
    if cfg.family != "bayar2016":
        raise ConfigError(f"build_bayar got family {cfg.family!r}")
    rng = np.random.default_rng(seed)
    nc = BAYAR_WIDTHS["constrained"]
    c1 = _w(BAYAR_WIDTHS["conv1"], cfg.width_scale)
    c2 = _w(BAYAR_WIDTHS["conv2"], cfg.width_scale)
    fc = _w(BAYAR_WIDTHS["fc"], cfg.width_scale)
    flat = bayar_flat_size(cfg)
    layers = [
        Scale(INPUT_SCALE, INPUT_SHIFT),
        ConstrainedConv2d(1, nc, 5, rng=rng, dtype=dtype),
        Conv2d(nc, c1, 7, stride=2, rng=rng, dtype=dtype), ReLU(), MaxPool2d(3, 2),
        Conv2d(c1, c2, 5, rng=rng, dtype=dtype), ReLU(), MaxPool2d(3, 2),
        Flatten(),
        Linear(flat, fc, rng=rng, dtype=dtype), ReLU(),
        Linear(fc, fc, rng=rng, dtype=dtype), ReLU(),
        Linear(fc, cfg.num_classes, rng=rng, dtype=dtype, gain=1.0),
    ]
    return Detector(cfg, *layers)


BUILDERS = {"bayar2016": build_bayar, "xception_mini": build_xception_mini,
            "proposed": build_proposed}


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Detector:
    return BUILDERS[cfg.family](cfg, seed=seed, dtype=dtype)


def bayar_param_count(cfg: ModelConfig) -> int:
    nc = BAYAR_WIDTHS["constrained"]
    c1 = _w(BAYAR_WIDTHS["conv1"], cfg.width_scale)
    c2 = _w(BAYAR_WIDTHS["conv2"], cfg.width_scale)
    fc = _w(BAYAR_WIDTHS["fc"], cfg.width_scale)
    flat = bayar_flat_size(cfg)
    return (nc * (25 + 1) + c1 * (nc * 49 + 1) + c2 * (c1 * 25 + 1)
            + fc * (flat + 1) + fc * (fc + 1) + cfg.num_classes * (fc + 1))


# ---------------------------------------------------------------- inference


def to_input(pixels, cfg: ModelConfig, dtype=np.float32) -> np.ndarray:
    """Blocks (ImageBuffer, Block, HxWxC or NxHxWxC uint8) -> NCHW float batch."""
    if isinstance(pixels, Block):
        pixels = pixels.pixels
    if isinstance(pixels, ImageBuffer):
        pixels = pixels.data
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected HxWxC or NxHxWxC pixels, got shape {arr.shape}")
    if arr.shape[3] == 3 and cfg.input_channels == 1:
        arr = arr[:, :, :, 1:2]
    if arr.shape[1:] != (cfg.input_size, cfg.input_size, cfg.input_channels):
        raise ValueError(f"block shape {arr.shape[1:]} does not match model input "
                         f"{(cfg.input_size, cfg.input_size, cfg.input_channels)}")
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=dtype)


def predict_batch(model: Detector, pixels, batch_size: int = 64):
    x = to_input(pixels, model.cfg, model.dtype)
    probs = []
    for i in range(0, len(x), batch_size):
        probs.append(softmax(model.logits(x[i:i + batch_size]).astype(np.float64)))
    p = np.concatenate(probs, axis=0)
    return p.argmax(axis=1), p


def predict(model: Detector, block) -> Tuple[int, np.ndarray]:
    labels, probs = predict_batch(model, block)
    return int(labels[0]), probs[0]


# --------------------------------------------------------------- persistence


def save_model(model: Detector, path, extra: Dict = None):
    cfg = {"model": model.cfg.to_dict()}
    if extra:
        cfg.update(extra)
    return save_checkpoint(path, model.state_dict(), cfg)


def load_model(path, expected: ModelConfig = None, dtype=np.float32):
    meta, state = load_checkpoint(path)
    cfg = ModelConfig(**meta["model"])
    if expected is not None and expected != cfg:
        raise CheckpointError(f"{path}: model config {cfg} does not match expected {expected}")
    model = build_model(cfg, dtype=dtype)
    model.load_state_dict(state)
    return model, meta
