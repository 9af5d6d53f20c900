"""No-reference naturalness scoring from scene statistics.

Mean-subtracted contrast-normalized (MSCN) coefficients of natural photos
follow tight generalized-Gaussian statistics. A quality model is a
multivariate Gaussian over 36 per-patch features (asymmetric GGD fits of
the MSCN field and four orientation products, at two scales). Scoring an
image measures the Mahalanobis-style distance between its patch statistics
and the model; larger distances mean less natural.

The second scale is produced by 2x2 block averaging (the same resampler
used everywhere in this package), so fitted models are self-consistent but
not interchangeable with models fitted by other toolchains.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn

from cycleiq import imgio
from cycleiq.iqa import QualityScore, as_gray

DEFAULT_PATCH = 96
DEFAULT_SHARPNESS = 0.75
MIN_FIT_IMAGES = 10
FEATURE_DIM = 36

_MAGIC = b"NIQM"
_VERSION = 1
_TRI = FEATURE_DIM * (FEATURE_DIM + 1) // 2

_GAM_GRID = np.arange(0.2, 10.0 + 1e-9, 0.001)
_R_GAM = (gamma_fn(2.0 / _GAM_GRID) ** 2) / (
    gamma_fn(1.0 / _GAM_GRID) * gamma_fn(3.0 / _GAM_GRID)
)

_SHIFTS = ((0, 1), (1, 0), (1, 1), (-1, 1))

_EPS = 1e-12


def _aggd_fit(vec: np.ndarray):
    """Asymmetric GGD parameters (shape, left std, right std) of a sample."""
    left = vec[vec < 0]
    right = vec[vec > 0]
    left_std = float(np.sqrt(np.mean(left * left))) if left.size else 0.0
    right_std = float(np.sqrt(np.mean(right * right))) if right.size else 0.0
    gamma_hat = left_std / (right_std + _EPS)
    r_hat = float(np.mean(np.abs(vec))) ** 2 / (float(np.mean(vec * vec)) + _EPS)
    r_hat_norm = (
        r_hat * (gamma_hat**3 + 1.0) * (gamma_hat + 1.0) / ((gamma_hat**2 + 1.0) ** 2)
    )
    alpha = float(_GAM_GRID[np.argmin((_R_GAM - r_hat_norm) ** 2)])
    return alpha, left_std, right_std


def _mscn(plane: np.ndarray):
    w = imgio.gaussian_kernel(7, 7.0 / 6.0)
    mu = imgio.convolve2d_same(plane, w)
    sigma = np.sqrt(np.abs(imgio.convolve2d_same(plane * plane, w) - mu * mu))
    return (plane - mu) / (sigma + 1.0), sigma


def _patch_features(mscn: np.ndarray) -> list:
    alpha, bl, br = _aggd_fit(mscn.ravel())
    feats = [alpha, (bl + br) / 2.0]
    for dy, dx in _SHIFTS:
        pair = mscn * np.roll(mscn, (dy, dx), axis=(0, 1))
        a, left, right = _aggd_fit(pair.ravel())
        const = np.sqrt(gamma_fn(1.0 / a)) / np.sqrt(gamma_fn(3.0 / a))
        mean_param = (right - left) * (gamma_fn(2.0 / a) / gamma_fn(1.0 / a)) * const
        feats.extend([a, mean_param, left, right])
    return feats


def _image_features(gray: np.ndarray, patch: int):
    """Per-patch 36-D features plus per-patch sharpness (mean local sigma)."""
    mscn1, sigma1 = _mscn(gray)
    mscn2, _ = _mscn(imgio.downsample_avg(gray, 2))
    rows = gray.shape[0] // patch
    cols = gray.shape[1] // patch
    half = patch // 2
    feats = np.empty((rows * cols, FEATURE_DIM))
    sharp = np.empty(rows * cols)
    k = 0
    for i in range(rows):
        for j in range(cols):
            p1 = mscn1[i * patch : (i + 1) * patch, j * patch : (j + 1) * patch]
            p2 = mscn2[i * half : (i + 1) * half, j * half : (j + 1) * half]
            feats[k, :18] = _patch_features(p1)
            feats[k, 18:] = _patch_features(p2)
            sharp[k] = sigma1[
                i * patch : (i + 1) * patch, j * patch : (j + 1) * patch
            ].mean()
            k += 1
    return feats, sharp


@dataclass
class NiqeModel:
    """Fitted naturalness model: Gaussian over patch features."""

    patch_size: int
    sharpness_threshold: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.mean.shape != (FEATURE_DIM,) or self.cov.shape != (
            FEATURE_DIM,
            FEATURE_DIM,
        ):
            raise ValueError(
                f"NiqeModel: expected mean ({FEATURE_DIM},) and cov "
                f"({FEATURE_DIM}, {FEATURE_DIM}), got {self.mean.shape}, {self.cov.shape}"
            )

    def save(self, path) -> None:
        """Binary, little-endian: magic, version, patch size, sharpness
        threshold, 36 means, upper-triangular covariance (666 values)."""
        iu = np.triu_indices(FEATURE_DIM)
        blob = struct.pack("<4sII", _MAGIC, _VERSION, self.patch_size)
        blob += struct.pack("<d", self.sharpness_threshold)
        blob += self.mean.astype("<f8").tobytes()
        blob += self.cov[iu].astype("<f8").tobytes()
        with open(path, "wb") as fh:
            fh.write(blob)

    @classmethod
    def load(cls, path) -> "NiqeModel":
        with open(path, "rb") as fh:
            blob = fh.read()
        head = struct.calcsize("<4sIId")
        if len(blob) < head + 8 * (FEATURE_DIM + _TRI):
            raise ValueError(f"truncated NIQE model file: {path!r}")
        magic, version, patch, thresh = struct.unpack("<4sIId", blob[:head])
        if magic != _MAGIC:
            raise ValueError(f"not a NIQE model file: {path!r}")
        if version != _VERSION:
            raise ValueError(f"unsupported NIQE model version {version} in {path!r}")
        body = np.frombuffer(blob[head:], dtype="<f8")
        mean = body[:FEATURE_DIM].copy()
        tri = body[FEATURE_DIM : FEATURE_DIM + _TRI]
        cov = np.zeros((FEATURE_DIM, FEATURE_DIM))
        iu = np.triu_indices(FEATURE_DIM)
        cov[iu] = tri
        cov = cov + np.triu(cov, 1).T
        return cls(patch, thresh, mean, cov)

    def to_json(self) -> str:
        """Human-readable dump for debugging; not the storage format."""
        return json.dumps(
            {
                "patch_size": self.patch_size,
                "sharpness_threshold": self.sharpness_threshold,
                "mean": self.mean.tolist(),
                "cov": self.cov.tolist(),
            },
            indent=2,
        )


def fit_niqe(
    images,
    patch_size: int = DEFAULT_PATCH,
    sharpness_threshold: float = DEFAULT_SHARPNESS,
) -> NiqeModel:
    """Fit a naturalness model from pristine images.

    Only patches whose local contrast is at least ``sharpness_threshold``
    times the sharpest patch of their image enter the fit.

    Raises:
        ValueError: when fewer than 10 images are large enough (two patches
            per side); the message reports usable and total counts.
    """
    grays = [as_gray(im) for im in images]
    usable = [g for g in grays if min(g.shape) >= 2 * patch_size]
    if len(usable) < MIN_FIT_IMAGES:
        raise ValueError(
            f"niqe fit needs at least {MIN_FIT_IMAGES} images with both sides "
            f">= {2 * patch_size}, got {len(usable)} usable of {len(grays)}"
        )
    rows = []
    for g in usable:
        feats, sharp = _image_features(g, patch_size)
        keep = sharp >= sharpness_threshold * sharp.max()
        rows.append(feats[keep])
    data = np.concatenate(rows, axis=0)
    mean = data.mean(axis=0)
    cov = np.cov(data, rowvar=False, ddof=1)
    return NiqeModel(patch_size, sharpness_threshold, mean, cov)


def niqe(test, model: NiqeModel) -> QualityScore:
    """Distance of an image's patch statistics from a fitted model.

    All full patches participate (no sharpness screening at test time).
    Returns value >= 0; 0 means the statistics match the model exactly.
    """
    g = as_gray(test)
    if min(g.shape) < model.patch_size:
        raise ValueError(
            f"niqe: image {g.shape} smaller than patch size {model.patch_size}"
        )
    feats, _ = _image_features(g, model.patch_size)
    mu = feats.mean(axis=0)
    cov = (
        np.cov(feats, rowvar=False, ddof=1)
        if feats.shape[0] >= 2
        else np.zeros((FEATURE_DIM, FEATURE_DIM))
    )
    pooled = (model.cov + cov) / 2.0
    d = model.mean - mu
    fallback = False
    try:
        q = float(d @ np.linalg.solve(pooled, d))
        if not np.isfinite(q):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        q = float(d @ np.linalg.pinv(pooled) @ d)
        fallback = True
    value = float(np.sqrt(max(q, 0.0)))
    meta = {"n_patches": int(feats.shape[0])}
    if fallback:
        meta["pinv_fallback"] = True
    return QualityScore(metric="niqe", value=value, metadata=meta)
