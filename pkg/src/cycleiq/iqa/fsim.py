"""Feature similarity index.

Combines phase congruency (the primary low-level feature the human visual
system keys on) with gradient magnitude as a secondary feature. The final
score pools the pointwise similarity weighted by the stronger of the two
phase congruency maps, so perceptually salient regions dominate.

``fsim`` scores luminance only; ``fsimc`` adds the chromatic I/Q
similarity term.
"""

from __future__ import annotations

import numpy as np

from cycleiq import imgio
from cycleiq.iqa import QualityScore, _check_same_shape, as_gray
from cycleiq.iqa.phasecong import phase_congruency

T1_PC = 0.85
T2_GRAD = 160.0
T3_I = 200.0
T4_Q = 200.0
CHROMA_LAMBDA = 0.03

#: Scharr operator (the /16 normalization matches the reference metric).
SCHARR_X = np.array(
    [
        [3.0, 0.0, -3.0],
        [10.0, 0.0, -10.0],
        [3.0, 0.0, -3.0],
    ]
) / 16.0


def _downsample_factor(shape: tuple) -> int:
    return max(1, int(round(min(shape[0], shape[1]) / 256.0)))


def _gradient_magnitude(plane: np.ndarray) -> np.ndarray:
    gx = imgio.convolve2d_same(plane, SCHARR_X)
    gy = imgio.convolve2d_same(plane, SCHARR_X.T)
    return np.sqrt(gx * gx + gy * gy)


def _similarity(a: np.ndarray, b: np.ndarray, c: float) -> np.ndarray:
    return (2.0 * a * b + c) / (a * a + b * b + c)


def _fsim_core(y1: np.ndarray, y2: np.ndarray):
    pc1 = phase_congruency(y1)
    pc2 = phase_congruency(y2)
    g1 = _gradient_magnitude(y1)
    g2 = _gradient_magnitude(y2)
    s_l = _similarity(pc1, pc2, T1_PC) * _similarity(g1, g2, T2_GRAD)
    pcm = np.maximum(pc1, pc2)
    return s_l, pcm


def fsim(ref, test) -> QualityScore:
    """Luminance feature similarity in [0, 1]; 1.0 for identical images."""
    y1 = as_gray(ref)
    y2 = as_gray(test)
    _check_same_shape(y1, y2)
    f = _downsample_factor(y1.shape)
    y1 = imgio.downsample_avg(y1, f)
    y2 = imgio.downsample_avg(y2, f)
    s_l, pcm = _fsim_core(y1, y2)
    value = float(np.sum(s_l * pcm) / (np.sum(pcm) + 1e-12))
    return QualityScore(metric="fsim", value=value, metadata={"downsample": f})


def _rgb_planes(image) -> np.ndarray:
    if isinstance(image, imgio.Image):
        arr = image.data
    else:
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr


def fsimc(ref, test) -> QualityScore:
    """Color-aware feature similarity: luminance FSIM modulated by I/Q
    chromatic similarity raised to a small exponent."""
    a = _rgb_planes(ref)
    b = _rgb_planes(test)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    yiq1 = imgio.rgb_to_yiq(a)
    yiq2 = imgio.rgb_to_yiq(b)
    f = _downsample_factor(a.shape)
    planes1 = [imgio.downsample_avg(yiq1[:, :, c], f) for c in range(3)]
    planes2 = [imgio.downsample_avg(yiq2[:, :, c], f) for c in range(3)]
    s_l, pcm = _fsim_core(planes1[0], planes2[0])
    s_i = _similarity(planes1[1], planes2[1], T3_I)
    s_q = _similarity(planes1[2], planes2[2], T4_Q)
    # Negative chromatic products can occur; take the real part of the
    # principal branch, as the reference implementation does.
    chroma = np.real((s_i * s_q).astype(complex) ** CHROMA_LAMBDA)
    value = float(np.sum(s_l * chroma * pcm) / (np.sum(pcm) + 1e-12))
    return QualityScore(metric="fsimc", value=value, metadata={"downsample": f})
