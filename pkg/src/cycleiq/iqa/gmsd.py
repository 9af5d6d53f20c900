"""Gradient magnitude similarity deviation.

Compares Prewitt gradient magnitude maps of reference and distorted
luminance and reports the standard deviation of the pointwise similarity.
A perfect match scores 0; larger values mean stronger, more spatially
varied distortion.

Pipeline: luminance in [0, 255] is reduced once by 2x2 block averaging,
gradients use the Prewitt pair divided by 3, and the similarity map uses
stability constant 170. The final pooling is the sample standard deviation
(N - 1 normalization).
"""

from __future__ import annotations

import numpy as np

from cycleiq import imgio
from cycleiq.iqa import QualityScore, _check_same_shape, as_gray

#: Stability constant for the gradient similarity map, tuned for [0, 255].
SIMILARITY_CONSTANT = 170.0

#: Horizontal Prewitt operator; the vertical one is its transpose.
PREWITT_X = np.array(
    [
        [1.0, 0.0, -1.0],
        [1.0, 0.0, -1.0],
        [1.0, 0.0, -1.0],
    ]
) / 3.0


def _gradient_magnitude(plane: np.ndarray) -> np.ndarray:
    gx = imgio.convolve2d_same(plane, PREWITT_X)
    gy = imgio.convolve2d_same(plane, PREWITT_X.T)
    return np.sqrt(gx * gx + gy * gy)


def gmsd(ref, test) -> QualityScore:
    """Gradient magnitude similarity deviation between two images.

    Args:
        ref: reference image, [0, 255].
        test: distorted image, same shape.

    Returns:
        QualityScore with ``value >= 0`` (0 for identical inputs) and the
        mean of the similarity map in ``metadata["gms_mean"]``.

    Raises:
        ValueError: on shape mismatch or images smaller than 4x4.
    """
    r = as_gray(ref)
    t = as_gray(test)
    _check_same_shape(r, t)
    if min(r.shape) < 4:
        raise ValueError(f"gmsd: image {r.shape} too small, need at least 4x4")
    r2 = imgio.downsample_avg(r, 2)
    t2 = imgio.downsample_avg(t, 2)
    gm_r = _gradient_magnitude(r2)
    gm_t = _gradient_magnitude(t2)
    gms = (2.0 * gm_r * gm_t + SIMILARITY_CONSTANT) / (
        gm_r * gm_r + gm_t * gm_t + SIMILARITY_CONSTANT
    )
    value = float(np.std(gms, ddof=1))
    return QualityScore(
        metric="gmsd",
        value=value,
        metadata={"gms_mean": float(gms.mean())},
    )
