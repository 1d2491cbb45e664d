"""SGD with momentum and weight decay, plus step / polynomial schedules."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from .layers import ConstrainedConv2d, Module, Parameter


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    schedule: str = "polynomial"  # "step" or "polynomial"
    gamma: float = 0.7
    step_size: int = 6
    power: float = 0.9
    max_iter: Optional[int] = None  # polynomial horizon; defaults to epochs * steps/epoch
    epochs: int = 60
    patience: int = 5
    seed: int = 0
    clip_norm: Optional[float] = None  # global gradient-norm ceiling; None disables

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.schedule not in ("step", "polynomial"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    def to_dict(self) -> Dict:
        return asdict(self)


def bayar_train_config(**overrides) -> TrainConfig:
    """Step-decay settings used for the shallow constrained network."""
    base = dict(lr0=0.01, momentum=0.95, weight_decay=0.0005, schedule="step",
                gamma=0.7, step_size=6)
    base.update(overrides)
    return TrainConfig(**base)


def lr_schedule(cfg: TrainConfig, t: int, max_iter: Optional[int] = None) -> float:
    """Learning rate at epoch ``t`` (step schedule) or iteration ``t`` (polynomial)."""
    if cfg.schedule == "step":
        return cfg.lr0 * cfg.gamma ** (t // cfg.step_size)
    horizon = max_iter if max_iter is not None else cfg.max_iter
    if not horizon:
        raise ValueError("polynomial schedule needs max_iter")
    frac = min(max(t / horizon, 0.0), 1.0)
    return cfg.lr0 * (1.0 - frac) ** cfg.power


def clip_gradients(grads: List[Optional[np.ndarray]], max_norm: float):
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm``; returns the
    norm before clipping."""
    total = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads if g is not None)))
    if total > max_norm:
        scale = max_norm / total
        grads = [None if g is None else g * g.dtype.type(scale) for g in grads]
    return grads, total


def sgd_step(params: List[Parameter], grads: List[Optional[np.ndarray]], cfg: TrainConfig,
             lr: float, velocity: List[np.ndarray], decay_masks: Optional[List] = None):
    """One in-place momentum step:
    ``v = momentum * v + grad + weight_decay * param * mask``; ``param -= lr * v``.
    """
    for k, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.values)
        v = velocity[k]
        v *= cfg.momentum
        v += g
        if cfg.weight_decay:
            mask = decay_masks[k] if decay_masks is not None else None
            if mask is None:
                v += cfg.weight_decay * p.values
            else:
                v += cfg.weight_decay * p.values * mask
        p.values -= p.values.dtype.type(lr) * v


def tangent_project(grad: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Drop the centre taps and the per-filter mean of the surround taps.

    A step along the result keeps every surround sum unchanged. Without
    this the 1/sum rescale turns a drifting sum into multiplicative weight
    growth, which destabilised the Bayar-style network.
    """
    g = grad * mask
    o, i = g.shape[:2]
    n = mask.reshape(o, i, -1).sum(axis=2)
    mean = g.reshape(o, i, -1).sum(axis=2) / n
    return g - mean[:, :, None, None] * mask


class SGD:
    """Stateful wrapper around :func:`sgd_step` that re-projects constrained layers.

    Gradients of constrained filters are first projected onto the zero-sum
    tangent plane (see :func:`tangent_project`); the rescale projection
    still runs after every step.
    """

    def __init__(self, model: Module, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.params = model.parameters()
        self.velocity = [np.zeros_like(p.values) for p in self.params]
        self.constrained = [m for m in model.modules() if isinstance(m, ConstrainedConv2d)]
        masks = {id(m.weight): m.centre_mask() for m in self.constrained}
        self.decay_masks = [masks.get(id(p)) for p in self.params]

    def step(self, lr: float):
        grads = [p.grad if p.grad is None or mask is None else tangent_project(p.grad, mask)
                 for p, mask in zip(self.params, self.decay_masks)]
        if self.cfg.clip_norm is not None:
            grads, self.last_grad_norm = clip_gradients(grads, self.cfg.clip_norm)
        sgd_step(self.params, grads, self.cfg, lr, self.velocity, self.decay_masks)
        for layer in self.constrained:
            layer.project()

    def zero_grad(self):
        for p in self.params:
            p.grad = None
