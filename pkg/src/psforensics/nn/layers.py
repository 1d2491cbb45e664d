"""Parameterised layers and the constrained first-layer projection."""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, List, Tuple

import numpy as np

from . import functional as F
from .tensor import Tensor, as_tensor, make

CONSTRAINT_KERNEL = 5


class DegenerateFilterError(ValueError):
    """Surrounding weights of a constrained filter sum to (numerically) zero."""


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, values, name=""):
        super().__init__(values, requires_grad=True, name=name)


class Module:
    """Base layer: owns parameters and optional child modules."""

    def __init__(self):
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def add_param(self, name, values) -> Parameter:
        p = Parameter(values, name=name)
        self._params[name] = p
        return p

    def add_child(self, name, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix="") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.values = arr.astype(p.dtype, copy=True)
        for m in self.modules():
            # re-project only off-constraint weights so a round trip stays bit-exact
            if isinstance(m, ConstrainedConv2d) and not m.satisfies_constraint():
                m.project()

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError


def kaiming(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding, self.kernel = stride, padding, kernel
        self.weight = self.add_param("weight", kaiming(rng, (out_ch, in_ch, kernel, kernel),
                                                       in_ch * kernel * kernel, dtype))
        self.bias = self.add_param("bias", np.zeros(out_ch, dtype=dtype))

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


def constrained_projection(weights: np.ndarray) -> np.ndarray:
    """Project (out, in, k, k) filters in place: centre = -1, the rest sums to 1."""
    o, i, kh, kw = weights.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError("constrained filters must be square with odd size")
    c = kh // 2
    centre = c * kw + c
    flat = weights.reshape(o, i, kh * kw)
    w64 = flat.astype(np.float64)
    w64[:, :, centre] = 0.0
    sums = w64.sum(axis=2)
    if np.any(np.abs(sums) < 1e-12):
        bad = list(zip(*np.nonzero(np.abs(sums) < 1e-12)))
        raise DegenerateFilterError(f"surrounding weights sum to zero for filters {bad}")
    w64 /= sums[:, :, None]
    flat[...] = w64
    if weights.dtype != np.float64:
        # fold the cast's rounding residual into the smallest tap, where it is representable
        flat[:, :, centre] = 0.0
        resid = 1.0 - flat.astype(np.float64).sum(axis=2)
        mag = np.abs(flat).astype(np.float64)
        mag[:, :, centre] = np.inf
        k = mag.argmin(axis=2)
        oo, ii = np.indices((o, i))
        flat[oo, ii, k] = (flat[oo, ii, k].astype(np.float64) + resid).astype(weights.dtype)
    flat[:, :, centre] = -1.0
    return weights


class ConstrainedConv2d(Conv2d):
    """5x5 conv whose filters are kept on the prediction-error constraint set."""

    constrained = True

    def __init__(self, in_ch, out_ch, kernel=CONSTRAINT_KERNEL, stride=1, rng=None,
                 dtype=np.float32):
        super().__init__(in_ch, out_ch, kernel, stride, 0, rng, dtype)
        # same-sign surround keeps the first projection away from a near-zero divisor
        np.abs(self.weight.values, out=self.weight.values)
        self._rng = np.random.default_rng(None if rng is None else rng.integers(2 ** 63))
        self.project()

    def centre_mask(self) -> np.ndarray:
        """1 everywhere except the centre taps (excluded from weight decay)."""
        mask = np.ones(self.weight.shape, dtype=self.weight.dtype)
        c = self.kernel // 2
        mask[:, :, c, c] = 0
        return mask

    def project(self):
        w = self.weight.values
        while True:
            try:
                constrained_projection(w)
                return
            except DegenerateFilterError:
                flat = w.reshape(w.shape[0], w.shape[1], -1).copy()
                c = (self.kernel // 2) * self.kernel + self.kernel // 2
                flat[:, :, c] = 0
                bad = np.abs(flat.sum(axis=2)) < 1e-12
                fan_in = w.shape[1] * self.kernel * self.kernel
                fresh = kaiming(self._rng, (int(bad.sum()), self.kernel, self.kernel), fan_in, w.dtype)
                w[bad] = np.abs(fresh)

    def satisfies_constraint(self, tol=1e-6) -> bool:
        return constraint_violation(self.weight.values) <= tol


def constraint_violation(weights: np.ndarray) -> float:
    """Max deviation from centre == -1 and surround-sum == 1 across filters."""
    o, i, kh, kw = weights.shape
    c = kh // 2
    w = weights.astype(np.float64)
    centre_err = np.abs(w[:, :, c, c] + 1.0).max()
    surround = w.reshape(o, i, -1).sum(axis=2) - w[:, :, c, c]
    return float(max(centre_err, np.abs(surround - 1.0).max()))


class SeparableConv2d(Module):
    def __init__(self, in_ch, out_ch, kernel=3, padding=1, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.padding = padding
        # no nonlinearity between depthwise and pointwise, so unit gain here
        dw = rng.standard_normal((in_ch, kernel, kernel)) * np.sqrt(1.0 / (kernel * kernel))
        self.depthwise = self.add_param("depthwise", dw.astype(dtype))
        self.pointwise = self.add_param("pointwise", kaiming(rng, (out_ch, in_ch, 1, 1), in_ch, dtype))
        self.bias = self.add_param("bias", np.zeros(out_ch, dtype=dtype))

    def forward(self, x):
        return F.separable_conv2d(x, self.depthwise, self.pointwise, self.bias, self.padding)


class Linear(Module):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32, gain=2.0):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        w = rng.standard_normal((out_features, in_features)) * np.sqrt(gain / in_features)
        self.weight = self.add_param("weight", w.astype(dtype))
        self.bias = self.add_param("bias", np.zeros(out_features, dtype=dtype))

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class ReLU(Module):
    def forward(self, x):
        return F.relu(x)


class MaxPool2d(Module):
    def __init__(self, window=2, stride=2):
        super().__init__()
        self.window, self.stride = window, stride

    def forward(self, x):
        return F.maxpool2d(x, self.window, self.stride)


class GlobalAvgPool(Module):
    def forward(self, x):
        return F.global_avg_pool(x)


class Flatten(Module):
    def forward(self, x):
        return F.flatten(x)


class Scale(Module):
    """Fixed multiplicative input scaling (no parameters)."""

    def __init__(self, factor, shift=0.0):
        super().__init__()
        self.factor, self.shift = factor, shift

    def forward(self, x):
        x = as_tensor(x)
        f = self.factor
        return make((x.values - self.shift) * f, (x,), lambda g: (g * f,))


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        for i, layer in enumerate(layers):
            self.add_child(str(i), layer)

    @property
    def layers(self) -> List[Module]:
        return list(self._children.values())

    def forward(self, x):
        for layer in self._children.values():
            x = layer(x)
        return x
