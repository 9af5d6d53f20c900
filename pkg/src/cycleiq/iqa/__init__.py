"""Full-reference and no-reference image quality metrics.

All metrics take images in [0, 255]. Full-reference scores accept
``imgio.Image`` or bare arrays; color inputs are reduced to NTSC luminance
unless a metric defines its own color path (FSIMc).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cycleiq import imgio

__all__ = [
    "QualityScore",
    "compute_metric",
    "METRICS",
]


@dataclass
class QualityScore:
    """One metric evaluation.

    Attributes:
        metric: metric name ("ssim", "fsim", ...).
        value: scalar score. Higher is better for ssim/fsim, lower for
            gmsd/niqe.
        metadata: extra per-metric outputs (map statistics, fallbacks hit).
    """

    metric: str
    value: float
    metadata: dict = field(default_factory=dict)


def as_gray(image) -> np.ndarray:
    """Extract an (H, W) luminance plane from an Image or array."""
    if isinstance(image, imgio.Image):
        return image.gray()
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.ndim == 3 and arr.shape[2] == 3:
        return imgio.rgb_to_gray(arr)
    raise ValueError(f"expected (H, W), (H, W, 1) or (H, W, 3), got {arr.shape}")


def _check_same_shape(ref, test):
    if ref.shape != test.shape:
        raise ValueError(f"image shapes differ: {ref.shape} vs {test.shape}")


from cycleiq.iqa.ssim import ssim  # noqa: E402
from cycleiq.iqa.gmsd import gmsd  # noqa: E402
from cycleiq.iqa.fsim import fsim, fsimc  # noqa: E402
from cycleiq.iqa.niqe import NiqeModel, fit_niqe, niqe  # noqa: E402

__all__ += ["ssim", "gmsd", "fsim", "fsimc", "NiqeModel", "fit_niqe", "niqe"]

METRICS = ("ssim", "fsim", "fsimc", "gmsd", "niqe")


def compute_metric(name: str, ref=None, test=None, model=None) -> QualityScore:
    """Dispatch a metric by name.

    ``niqe`` needs ``test`` and a fitted ``model``; the full-reference
    metrics need ``ref`` and ``test``.
    """
    if name == "niqe":
        if model is None or test is None:
            raise ValueError("niqe requires a test image and a fitted model")
        return niqe(test, model)
    if name not in METRICS:
        raise ValueError(f"unknown metric {name!r}, expected one of {METRICS}")
    if ref is None or test is None:
        raise ValueError(f"{name} requires both a reference and a test image")
    return {"ssim": ssim, "fsim": fsim, "fsimc": fsimc, "gmsd": gmsd}[name](ref, test)
