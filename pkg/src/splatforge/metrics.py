"""Image quality metrics and the composite training-style loss.

All metrics take (H, W, 3) float images in [0, 1]. SSIM uses an 11x11
gaussian window (sigma 1.5) evaluated on the valid interior (no padding)
per channel, then averaged. The perceptual term is an injectable callable
so a learned scorer can be plugged in; with the default None it simply
contributes zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .errors import ShapeMismatch, TooSmall

_WINDOW = 11
_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2

_PSNR_CAP = 120.0
_PSNR_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for (mse, perceptual, ssim-complement)."""

    mse: float = 1.0
    perceptual: float = 0.05
    ssim: float = 0.03


def _check_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3) images, got {a.shape}")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    diff = a - b
    return float(np.mean(diff * diff))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise in dB for unit-range images, capped at 120."""
    err = mse(a, b)
    if err < _PSNR_FLOOR:
        return _PSNR_CAP
    return float(10.0 * np.log10(1.0 / err))


def _gaussian_window() -> np.ndarray:
    half = (_WINDOW - 1) / 2.0
    coords = np.arange(_WINDOW, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * _SIGMA * _SIGMA))
    g /= g.sum()
    return np.outer(g, g)


_KERNEL = _gaussian_window()


def _filter_valid(x: np.ndarray) -> np.ndarray:
    """2-D gaussian filter, valid region only."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (_WINDOW, _WINDOW))
    return np.einsum("ijkl,kl->ij", windows, _KERNEL)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over channels; symmetric in a and b."""
    a, b = _check_pair(a, b)
    h, w = a.shape[:2]
    if h < _WINDOW or w < _WINDOW:
        raise TooSmall(f"SSIM needs at least {_WINDOW}x{_WINDOW} images, got {h}x{w}")
    vals = []
    for ch in range(3):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mu_x = _filter_valid(x)
        mu_y = _filter_valid(y)
        var_x = _filter_valid(x * x) - mu_x * mu_x
        var_y = _filter_valid(y * y) - mu_y * mu_y
        cov = _filter_valid(x * y) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + _C1) * (2.0 * cov + _C2)
        den = (mu_x * mu_x + mu_y * mu_y + _C1) * (var_x + var_y + _C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def composite_loss(
    rendered: np.ndarray,
    target: np.ndarray,
    weights: LossWeights = LossWeights(),
    perceptual: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
) -> Tuple[float, Dict[str, Optional[float]]]:
    """Weighted sum of mse, an optional perceptual score, and 1 - ssim.

    Returns (total, parts); parts holds the raw unweighted terms with
    perceptual None when no scorer is supplied.
    """
    part_mse = mse(rendered, target)
    part_ssim = ssim(rendered, target)
    part_perc = float(perceptual(rendered, target)) if perceptual is not None else None
    total = weights.mse * part_mse + weights.ssim * (1.0 - part_ssim)
    if part_perc is not None:
        total += weights.perceptual * part_perc
    return float(total), {"mse": part_mse, "perceptual": part_perc, "ssim": part_ssim}
