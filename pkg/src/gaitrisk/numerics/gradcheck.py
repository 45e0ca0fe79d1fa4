"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(fn, x: Tensor, eps: float = 1e-4, max_probes: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare fn's reverse-mode gradient w.r.t. x against central differences.

    fn must map the tensor x to a scalar Tensor and be smooth at the probe
    point. Every element of x is probed unless max_probes caps the count, in
    which case a uniform sample of coordinates (without replacement) is
    checked. Returns the worst relative error over probed coordinates,
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x.requires_grad = True
    x.zero_grad()
    out = fn(x)
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite function value at probe point")
    out.backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    x.zero_grad()

    flat = x.data.reshape(-1)
    n = flat.size
    if max_probes is not None and max_probes < n:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(n, size=max_probes, replace=False)
    else:
        coords = np.arange(n)

    def value() -> float:
        y = fn(x)
        v = float(y.data.reshape(-1)[0])
        if not np.isfinite(v):
            raise FloatingPointError("non-finite function value during probing")
        return v

    analytic_flat = analytic.reshape(-1)
    worst = 0.0
    for c in coords:
        orig = flat[c]
        flat[c] = orig + eps
        f_plus = value()
        flat[c] = orig - eps
        f_minus = value()
        flat[c] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic_flat[c])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        if rel > worst:
            worst = rel
    return worst
