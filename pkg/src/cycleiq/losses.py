"""Objective terms for two-domain translation training.

Generator terms only; the critic objective is the discriminator form
below applied to detached translations. All reductions are means over
elements so the weight magnitudes are resolution-independent.

Two adversarial forms exist. The least-squares pair is what training
uses. The logarithmic form is kept because it is the textbook objective
and tests pin its values, but its gradients saturate badly with raw
patch scores, so no optimizer here ever consumes it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from cycleiq import autodiff as ad
from cycleiq.autodiff import Tensor
from cycleiq.diff_fsim import fsim_index
from cycleiq.diff_niqe import niqe_index
from cycleiq.iqa import as_gray
from cycleiq.nets import CycleModel, discriminator_forward, encoder_features, generator_forward

VARIANTS = (
    "cyclegan_baseline",
    "qgan_a",
    "qgan_c",
    "qgan_niqe",
    "qgan_a_norec",
    "qgan_c_norec",
)

_GRAY = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the non-adversarial terms plus the content-tap index.

    Defaults follow the usual tuning: reconstruction 10, quality 15x
    that, content 20x that, features tapped at encoder layer 6.
    """

    theta_u: float = 10.0
    theta_v: float = 10.0
    alpha_u: float = 150.0
    alpha_v: float = 150.0
    beta_u: float = 200.0
    beta_v: float = 200.0
    tap_layer: int = 6

    def __post_init__(self):
        for name in ("theta_u", "theta_v", "alpha_u", "alpha_v", "beta_u", "beta_v"):
            if getattr(self, name) < 0:
                raise ValueError(f"LossWeights.{name} must be >= 0")
        if self.tap_layer < 1:
            raise ValueError("LossWeights.tap_layer must be >= 1")

    @classmethod
    def from_theta(cls, theta: float, tap_layer: int = 6) -> "LossWeights":
        return cls(theta, theta, 15 * theta, 15 * theta, 20 * theta, 20 * theta, tap_layer)

    def without_reconstruction(self) -> "LossWeights":
        return replace(self, theta_u=0.0, theta_v=0.0)


def adversarial_g(d_u_fake: Tensor, d_v_fake: Tensor) -> Tensor:
    """Least-squares generator term: both critics' scores on translations
    pushed toward 1. Mean over each patch map, summed over directions."""
    return ad.add(
        ad.tensor_mean(ad.square(d_u_fake - 1.0)),
        ad.tensor_mean(ad.square(d_v_fake - 1.0)),
    )


def adversarial_d(
    d_u_real: Tensor, d_u_fake: Tensor, d_v_real: Tensor, d_v_fake: Tensor
) -> Tensor:
    """Least-squares critic term: reals toward 1, translations toward 0."""
    return (
        ad.tensor_mean(ad.square(1.0 - d_u_real))
        + ad.tensor_mean(ad.square(d_u_fake))
        + ad.tensor_mean(ad.square(1.0 - d_v_real))
        + ad.tensor_mean(ad.square(d_v_fake))
    )


def log_adversarial(
    d_u_real: Tensor, d_u_fake: Tensor, d_v_real: Tensor, d_v_fake: Tensor
) -> Tensor:
    """Logarithmic adversarial objective over scores in (0, 1).

    Callers must squash raw patch maps first (e.g. through a sigmoid);
    the domain is not checked. Reference form only: see module docstring.
    """
    return (
        ad.tensor_mean(ad.log(d_v_real))
        + ad.tensor_mean(ad.log(1.0 - d_v_fake))
        + ad.tensor_mean(ad.log(d_u_real))
        + ad.tensor_mean(ad.log(1.0 - d_u_fake))
    )


def _mean_abs(a: Tensor, b: Tensor, what: str) -> Tensor:
    if a.shape != b.shape:
        raise ad.ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return ad.tensor_mean(ad.absolute(ad.subtract(a, b)))


def _sum_terms(terms: list, like: Tensor | None = None) -> Tensor:
    if not terms:
        dtype = like.dtype if like is not None else np.float64
        return Tensor(np.zeros((), dtype=dtype))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


def reconstruction_l1(u: Tensor, u_hat: Tensor, v: Tensor, v_hat: Tensor, w: LossWeights) -> Tensor:
    """Weighted L1 distance between each image and its round trip."""
    terms = []
    if w.theta_u != 0.0:
        terms.append(_mean_abs(u, u_hat, "reconstruction_l1") * w.theta_u)
    if w.theta_v != 0.0:
        terms.append(_mean_abs(v, v_hat, "reconstruction_l1") * w.theta_v)
    return _sum_terms(terms, u)


def luminance_255(x: Tensor) -> Tensor:
    """(N, C, H, W) in [-1, 1] to (N, 1, H, W) luminance in [0, 255]."""
    if x.ndim != 4 or x.shape[1] not in (1, 3):
        raise ad.ShapeError(f"luminance_255: expected (N, 1|3, H, W), got {x.shape}")
    if x.shape[1] == 3:
        y = (
            ad.slice_channels(x, 0, 1) * _GRAY[0]
            + ad.slice_channels(x, 1, 2) * _GRAY[1]
            + ad.slice_channels(x, 2, 3) * _GRAY[2]
        )
    else:
        y = x
    return (y + 1.0) * 127.5


def quality_penalty(s_u: Tensor, s_v: Tensor, alpha_u: float, alpha_v: float) -> Tensor:
    """alpha_u*(1 - s_u) + alpha_v*(1 - s_v) with zero weights skipped."""
    terms = []
    if alpha_u != 0.0:
        terms.append((1.0 - s_u) * alpha_u)
    if alpha_v != 0.0:
        terms.append((1.0 - s_v) * alpha_v)
    return _sum_terms(terms, s_u)


def quality_fsim_loss(u, u_hat: Tensor, v, v_hat: Tensor, w: LossWeights) -> Tensor:
    """Feature-similarity penalty between images and their round trips.

    Args:
        u, v: (H, W) or (H, W, 3) arrays in [0, 255] (constants).
        u_hat, v_hat: (1, C, H, W) tensors in [-1, 1] (gradients flow).
    """
    s_u = fsim_index(luminance_255(u_hat), as_gray(u)) if w.alpha_u != 0.0 else Tensor(0.0)
    s_v = fsim_index(luminance_255(v_hat), as_gray(v)) if w.alpha_v != 0.0 else Tensor(0.0)
    return quality_penalty(s_u, s_v, w.alpha_u, w.alpha_v)


def quality_content_loss(
    f_u: Tensor, f_u_hat: Tensor, f_v: Tensor, f_v_hat: Tensor, w: LossWeights
) -> Tensor:
    """Weighted L1 distance between tap features of images and round trips.

    Both feature arguments of each pair stay live: the tap belongs to the
    training generator, so its parameters receive gradient from both
    sides and the feature space itself adapts.
    """
    terms = []
    if w.beta_u != 0.0:
        terms.append(_mean_abs(f_u, f_u_hat, "quality_content_loss") * w.beta_u)
    if w.beta_v != 0.0:
        terms.append(_mean_abs(f_v, f_v_hat, "quality_content_loss") * w.beta_v)
    return _sum_terms(terms, f_u)


def quality_niqe_loss(u_hat: Tensor, v_hat: Tensor, w: LossWeights, model) -> Tensor:
    """Naturalness penalty on round trips, weighted like reconstruction."""
    terms = []
    if w.theta_u != 0.0:
        terms.append(niqe_index(luminance_255(u_hat), model) * w.theta_u)
    if w.theta_v != 0.0:
        terms.append(niqe_index(luminance_255(v_hat), model) * w.theta_v)
    return _sum_terms(terms, u_hat)


def batch_to_tensor(arr: np.ndarray, dtype) -> Tensor:
    """(m, H, W, C) images in [0, 255] to a constant (m, C, H, W) tensor
    in [-1, 1]."""
    arr = np.asarray(arr)
    if arr.ndim != 4:
        raise ad.ShapeError(f"batch_to_tensor: expected (m, H, W, C), got {arr.shape}")
    x = np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=dtype) / 127.5 - 1.0
    return Tensor(x)


def _per_sample_mean(scalars: list) -> Tensor:
    total = _sum_terms(scalars)
    return total * (1.0 / len(scalars)) if len(scalars) > 1 else total


def generator_terms(
    variant: str,
    batch,
    model: CycleModel,
    weights: LossWeights,
    niqe_model=None,
) -> dict:
    """Generator-side objective terms for one minibatch.

    Args:
        variant: one of VARIANTS.
        batch: (u, v) arrays of shape (m, H, W, C) in [0, 255].
        model: the four networks; all forwards run on the active tape.
        weights: term weights; *_norec variants zero the reconstruction.
        niqe_model: required for the naturalness variant.

    Returns:
        dict of scalar Tensors keyed by term name, in summation order.
        Terms whose weights are zero are omitted entirely, so an ablated
        variant builds the identical graph to the variant without the
        term.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    u_arr, v_arr = batch
    w = weights.without_reconstruction() if variant.endswith("_norec") else weights
    dtype = model.g_u["l01.w"].dtype

    x_u = batch_to_tensor(u_arr, dtype)
    x_v = batch_to_tensor(v_arr, dtype)
    tap = (w.tap_layer,) if variant in ("qgan_c", "qgan_c_norec") else ()

    fake_v, feats_u = generator_forward(model.g_u, x_u, model.gen_cfg, taps=tap)
    fake_u, feats_v = generator_forward(model.g_v, x_v, model.gen_cfg, taps=tap)
    recon_u, _ = generator_forward(model.g_v, fake_v, model.gen_cfg)
    recon_v, _ = generator_forward(model.g_u, fake_u, model.gen_cfg)

    d_u_fake = discriminator_forward(model.d_u, fake_u, model.disc_cfg)
    d_v_fake = discriminator_forward(model.d_v, fake_v, model.disc_cfg)

    terms = {"adversarial": adversarial_g(d_u_fake, d_v_fake)}

    if w.theta_u != 0.0 or w.theta_v != 0.0:
        terms["reconstruction"] = reconstruction_l1(x_u, recon_u, x_v, recon_v, w)

    if variant in ("qgan_a", "qgan_a_norec") and (w.alpha_u != 0.0 or w.alpha_v != 0.0):
        m = u_arr.shape[0]
        q_terms = []
        for alpha, recon, ref in ((w.alpha_u, recon_u, u_arr), (w.alpha_v, recon_v, v_arr)):
            if alpha == 0.0:
                continue
            s = _per_sample_mean(
                [
                    fsim_index(luminance_255(ad.slice_batch(recon, i, i + 1)), as_gray(ref[i]))
                    for i in range(m)
                ]
            )
            q_terms.append((1.0 - s) * alpha)
        terms["quality"] = _sum_terms(q_terms)

    elif variant in ("qgan_c", "qgan_c_norec") and (w.beta_u != 0.0 or w.beta_v != 0.0):
        f_u_hat = encoder_features(model.g_u, recon_u, model.gen_cfg, w.tap_layer)
        f_v_hat = encoder_features(model.g_v, recon_v, model.gen_cfg, w.tap_layer)
        terms["quality"] = quality_content_loss(
            feats_u[w.tap_layer], f_u_hat, feats_v[w.tap_layer], f_v_hat, w
        )

    elif variant == "qgan_niqe" and (w.theta_u != 0.0 or w.theta_v != 0.0):
        if niqe_model is None:
            raise ValueError("variant 'qgan_niqe' needs a fitted naturalness model")
        m = u_arr.shape[0]
        q_terms = []
        for theta, recon in ((w.theta_u, recon_u), (w.theta_v, recon_v)):
            if theta == 0.0:
                continue
            n = _per_sample_mean(
                [
                    niqe_index(luminance_255(ad.slice_batch(recon, i, i + 1)), niqe_model)
                    for i in range(m)
                ]
            )
            q_terms.append(n * theta)
        terms["quality"] = _sum_terms(q_terms)

    return terms


def total_loss(
    variant: str,
    batch,
    model: CycleModel,
    weights: LossWeights,
    niqe_model=None,
) -> Tensor:
    """Sum of the variant's generator-side terms."""
    return _sum_terms(list(generator_terms(variant, batch, model, weights, niqe_model).values()))
