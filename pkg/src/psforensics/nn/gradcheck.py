"""Finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradcheckResult:
    max_error: float
    checked: int
    skipped: int  # entries straddling a ReLU/max-pool kink


def gradcheck_detail(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-6,
                     max_entries: Optional[int] = None, rng=None,
                     analytic: Optional[Sequence[np.ndarray]] = None, floor: float = 1e-8,
                     skip_kinks: bool = False, kink_tol: float = 1e-3) -> GradcheckResult:
    """Compare backprop gradients of the scalar ``fn()`` with central differences.

    ``max_entries`` caps the number of perturbed entries per tensor (sampled
    without replacement). ``analytic`` overrides the backprop gradients, which
    lets a test feed in a deliberately wrong gradient. With ``skip_kinks``, an
    entry whose forward and backward one-sided slopes disagree by more than
    ``kink_tol`` (relative) sits on a non-differentiable point within ``eps``
    and is excluded; the count is reported.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    out = fn()
    if out.values.size != 1:
        raise ValueError("gradcheck needs a scalar-valued function")
    f0 = float(out.values)
    if analytic is None:
        out.backward()
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.values) for t in tensors]

    worst, checked, skipped = 0.0, 0, 0
    for t, ga in zip(tensors, analytic):
        flat = t.values.reshape(-1)
        ga = np.asarray(ga).reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            plus = float(fn().values)
            flat[i] = orig - eps
            minus = float(fn().values)
            flat[i] = orig
            if skip_kinks:
                fwd, bwd = (plus - f0) / eps, (f0 - minus) / eps
                if relative_error(np.array(fwd), np.array(bwd), max(floor, 1e-6)) > kink_tol:
                    skipped += 1
                    continue
            num = (plus - minus) / (2 * eps)
            worst = max(worst, float(relative_error(np.array(ga[i]), np.array(num), floor)))
            checked += 1
    return GradcheckResult(worst, checked, skipped)


def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-6,
              max_entries: Optional[int] = None, rng=None,
              analytic: Optional[Sequence[np.ndarray]] = None, floor: float = 1e-8,
              skip_kinks: bool = False) -> float:
    """Max relative error between backprop and central differences (see ``gradcheck_detail``)."""
    return gradcheck_detail(fn, tensors, eps, max_entries, rng, analytic, floor, skip_kinks).max_error
