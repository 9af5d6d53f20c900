"""Naturalness scoring as a differentiable graph.

Mirrors the evaluation scorer: MSCN coefficients, asymmetric-GGD patch
features at two scales, then the Mahalanobis-style distance between the
image's feature statistics and a fitted model. Differences from the
evaluation path, all deliberate:

- Shape parameters come from the same grid lookup the evaluation path
  uses, but enter the graph as constants (the lookup is a discrete
  argmin). Gradients flow through the left/right spreads, the mean
  parameters, and the feature mean/covariance.
- Square roots carry the tape's 1e-8 shift, and the final distance is
  sqrt(q + 1e-8) - 1e-4 so a perfect statistical match still scores 0.
- The pooled covariance gets a small ridge before the solve; the
  evaluation path instead falls back to a pseudo-inverse when singular.

Restricted to single images (N == 1): feature statistics are per-image.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gamma as gamma_fn

from cycleiq import autodiff as ad
from cycleiq import imgio
from cycleiq.autodiff import Tensor
from cycleiq.iqa.niqe import _SHIFTS, FEATURE_DIM, NiqeModel, _aggd_fit

RIDGE = 1e-6
_FLOOR = float(np.sqrt(ad.SQRT_EPS))


def _mscn_graph(x: Tensor) -> Tensor:
    w = imgio.gaussian_kernel(7, 7.0 / 6.0)
    k = Tensor(w[None, None].astype(x.dtype))
    mu = ad.conv2d(x, k, stride=1, padding=3, pad_mode="reflect")
    ex2 = ad.conv2d(ad.square(x), k, stride=1, padding=3, pad_mode="reflect")
    sigma = ad.sqrt(ad.absolute(ad.subtract(ex2, ad.square(mu))))
    return ad.divide(ad.subtract(x, mu), sigma + 1.0)


def _sided_spread(vec: Tensor, mask: np.ndarray) -> Tensor:
    """sqrt of the mean square over one sign class; 0 when the class is empty."""
    n = int(mask.sum())
    if n == 0:
        return Tensor(np.zeros((), dtype=vec.dtype))
    masked = ad.multiply(ad.square(vec), Tensor(mask.astype(vec.dtype)))
    return ad.sqrt(ad.tensor_sum(masked) * (1.0 / n))


def _aggd_graph(vec: Tensor):
    """(constant shape, left spread, right spread) of a coefficient tensor."""
    data = vec.data.ravel()
    alpha, _, _ = _aggd_fit(data)
    shaped = vec.data
    left = _sided_spread(vec, shaped < 0)
    right = _sided_spread(vec, shaped > 0)
    return alpha, left, right


def _patch_features_graph(patch: Tensor) -> list:
    alpha, bl, br = _aggd_graph(patch)
    feats = [Tensor(np.asarray(alpha, dtype=patch.dtype)), ad.add(bl, br) * 0.5]
    for dy, dx in _SHIFTS:
        pair = ad.multiply(patch, ad.roll2d(patch, dy, dx))
        a, left, right = _aggd_graph(pair)
        const = np.sqrt(gamma_fn(1.0 / a)) / np.sqrt(gamma_fn(3.0 / a))
        scale = (gamma_fn(2.0 / a) / gamma_fn(1.0 / a)) * const
        mean_param = ad.subtract(right, left) * float(scale)
        feats.extend([Tensor(np.asarray(a, dtype=patch.dtype)), mean_param, left, right])
    return feats


def niqe_index(live: Tensor, model: NiqeModel) -> Tensor:
    """Naturalness distance of a live luminance tensor from a fitted model.

    Args:
        live: (1, 1, H, W) tensor in [0, 255] (gradients flow through it).
        model: fitted naturalness model; its patch size sets the grid.

    Returns:
        scalar Tensor >= 0; approximately the evaluation score.
    """
    if live.ndim != 4 or live.shape[0] != 1 or live.shape[1] != 1:
        raise ad.ShapeError(f"niqe_index: expected (1, 1, H, W), got {live.shape}")
    patch = model.patch_size
    if patch % 2:
        raise ValueError(f"niqe_index: patch size must be even, got {patch}")
    h, w = live.shape[2], live.shape[3]
    rows, cols = h // patch, w // patch
    if rows == 0 or cols == 0:
        raise ValueError(f"niqe_index: image ({h}, {w}) smaller than patch size {patch}")
    half = patch // 2

    mscn1 = _mscn_graph(live)
    even = ad.slice_spatial(live, 0, 2 * (h // 2), 0, 2 * (w // 2))
    mscn2 = _mscn_graph(ad.avg_pool2(even))

    rows_feats = []
    for i in range(rows):
        for j in range(cols):
            p1 = ad.slice_spatial(
                mscn1, i * patch, (i + 1) * patch, j * patch, (j + 1) * patch
            )
            p2 = ad.slice_spatial(
                mscn2, i * half, (i + 1) * half, j * half, (j + 1) * half
            )
            feats = _patch_features_graph(p1) + _patch_features_graph(p2)
            rows_feats.append(ad.stack(feats))
    n = len(rows_feats)
    x = ad.stack(rows_feats)

    ones = Tensor(np.full((1, n), 1.0 / n, dtype=x.dtype))
    mu = ad.matmul(ones, x)
    d = ad.reshape(ad.subtract(Tensor(model.mean[None].astype(x.dtype)), mu), (FEATURE_DIM,))

    base = model.cov / 2.0 + RIDGE * np.eye(FEATURE_DIM)
    if n >= 2:
        centered = ad.subtract(x, mu)
        cov = ad.matmul(ad.transpose2d(centered), centered) * (1.0 / (n - 1))
        pooled = ad.add(cov * 0.5, Tensor(base.astype(x.dtype)))
    else:
        pooled = Tensor(base.astype(x.dtype))

    q = ad.mahalanobis_sq(d, pooled)
    return ad.sqrt(ad.relu(q)) - _FLOOR
