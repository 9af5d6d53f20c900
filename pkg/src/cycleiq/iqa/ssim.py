"""Structural similarity on luminance.

Classic single-scale SSIM: 11x11 Gaussian window (sigma 1.5), stability
constants C1 = (0.01 * 255)^2 and C2 = (0.03 * 255)^2, statistics over
valid window positions only, no downsampling.
"""

from __future__ import annotations

import numpy as np
import scipy.ndimage

from cycleiq import imgio
from cycleiq.iqa import QualityScore, _check_same_shape, as_gray

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 6.5025
C2 = 58.5225


def _valid_filter(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    half = window.shape[0] // 2
    out = scipy.ndimage.correlate(plane, window, mode="constant")
    return out[half:-half, half:-half]


def ssim(ref, test) -> QualityScore:
    """Mean SSIM between two images; 1.0 means identical structure.

    Raises:
        ValueError: on shape mismatch or images smaller than the window.
    """
    r = as_gray(ref)
    t = as_gray(test)
    _check_same_shape(r, t)
    if min(r.shape) < WINDOW_SIZE:
        raise ValueError(
            f"ssim: image {r.shape} smaller than {WINDOW_SIZE}x{WINDOW_SIZE} window"
        )
    w = imgio.gaussian_kernel(WINDOW_SIZE, WINDOW_SIGMA)
    mu1 = _valid_filter(r, w)
    mu2 = _valid_filter(t, w)
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    mu12 = mu1 * mu2
    sigma1_sq = _valid_filter(r * r, w) - mu1_sq
    sigma2_sq = _valid_filter(t * t, w) - mu2_sq
    sigma12 = _valid_filter(r * t, w) - mu12
    ssim_map = ((2.0 * mu12 + C1) * (2.0 * sigma12 + C2)) / (
        (mu1_sq + mu2_sq + C1) * (sigma1_sq + sigma2_sq + C2)
    )
    return QualityScore(
        metric="ssim",
        value=float(ssim_map.mean()),
        metadata={"map_min": float(ssim_map.min()), "map_max": float(ssim_map.max())},
    )
