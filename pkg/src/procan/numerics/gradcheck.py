"""Central finite differences: the oracle every analytic gradient is checked against."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import UsageError


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Estimate df/dx coordinate by coordinate with (f(x+εe) - f(x-εe)) / 2ε.

    ``x`` is perturbed in place and restored, so closures that hold a
    reference to the same buffer see the perturbation.
    """
    if eps <= 0:
        raise UsageError(f"eps must be positive, got {eps}")
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise |a - b| / max(|a|, |b|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max(initial=0.0))
