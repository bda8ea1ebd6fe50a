"""Image quality metrics on [0, 1] images."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_MAX = 99.0
LUMA = np.array([0.2126, 0.7152, 0.0722])
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window
C1 = 0.01**2
C2 = 0.03**2


def metric_psnr(a, b, mask=None) -> float:
    """10 log10(1 / MSE) over masked pixels; identical images give ``PSNR_MAX``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d2 = (a - b) ** 2
    if d2.ndim == 3:
        d2 = d2.mean(axis=-1)
    if mask is not None:
        m = np.asarray(mask) > 0.5
        if not m.any():
            raise ValueError("empty mask")
        d2 = d2[m]
    mse = float(d2.mean())
    if mse <= 0.0:
        return PSNR_MAX
    return min(PSNR_MAX, 10.0 * math.log10(1.0 / mse))


def luminance(img):
    img = np.asarray(img, dtype=np.float64)
    return img @ LUMA if img.ndim == 3 else img


def metric_ssim(a, b) -> float:
    """Mean SSIM of the luminance images with an 11x11 Gaussian window (sigma 1.5)."""
    x = luminance(a)
    y = luminance(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")

    def blur(z):
        return gaussian_filter(z, SSIM_SIGMA, truncate=SSIM_RADIUS / SSIM_SIGMA, mode="reflect")

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    s = ((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2))
    return float(s.mean())
