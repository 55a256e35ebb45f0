"""Structural similarity over non-overlapping windows.

Tile statistics are uniform-weighted with biased variance, constants
c1 = 0.01^2 and c2 = 0.03^2 at dynamic range 1. Values land in [-1, 1]
and equal 1 exactly when the two images agree window-wise.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from . import _kernels

WINDOW = 8
C1 = 0.01**2
C2 = 0.03**2


def _prepare(a, b, window: int):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    single = a.ndim == 2
    if single:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise DimensionError("expected [h, w] images or an [n, h, w] batch")
    if a.shape[1] % window or a.shape[2] % window:
        raise DimensionError(
            f"image sides {a.shape[1:]} must be multiples of the window size {window}"
        )
    return a, b, single


def ssim(a, b, window: int = WINDOW, c1: float = C1, c2: float = C2):
    """Mean SSIM between images in [0, 1]; scalar for a single image pair."""
    a, b, single = _prepare(a, b, window)
    values = _kernels.ssim_values(a, b, window, c1, c2)
    return float(values[0]) if single else values


def ssim_with_grad(a, b, window: int = WINDOW, c1: float = C1, c2: float = C2):
    """Mean SSIM plus d(ssim)/d(a); used by the reconstruction loss."""
    a, b, single = _prepare(a, b, window)
    values, grad = _kernels.ssim_values_and_grad(a, b, window, c1, c2)
    if single:
        return float(values[0]), grad[0]
    return values, grad
