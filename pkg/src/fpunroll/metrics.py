"""PSNR, SSIM and studio-swing luma."""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all elements; ``inf`` when equal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not peak > 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of a 2-D image."""
    n = g.size
    H, W = img.shape
    rows = sum(g[i] * img[i : H - n + 1 + i, :] for i in range(n))
    return sum(g[j] * rows[:, j : W - n + 1 + j] for j in range(n))


def ssim(a, b, peak: float = 1.0, window: int = 11, sigma: float = 1.5, K1: float = 0.01, K2: float = 0.03) -> float:
    """Mean SSIM of two single-channel images with a Gaussian window.

    Statistics are taken over every full window position (no padding and
    no extra border crop).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 3 and a.shape[-1] == 1:
        a, b = a[..., 0], b[..., 0]
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeError(f"ssim expects a single-channel image, got shape {a.shape}")
    if min(a.shape) < window:
        raise ShapeError(f"image {a.shape} smaller than the {window}x{window} window")
    if np.array_equal(a, b):
        return 1.0
    C1 = (K1 * peak) ** 2
    C2 = (K2 * peak) ** 2
    g = gaussian_window(window, sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * sab + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (saa + sbb + C2)
    return float(np.mean(num / den))


def rgb_to_y(img) -> np.ndarray:
    """Studio-swing luma of an RGB image in [0, 1]; result in [16/255, 235/255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-1] != 3:
        raise ShapeError(f"expected 3 channels in the last axis, got {img.shape}")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0
