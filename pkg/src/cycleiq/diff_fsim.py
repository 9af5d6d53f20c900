"""Feature-similarity index as a differentiable graph.

The evaluation metric computes log-Gabor responses with FFTs, outside the
tape. This module replays the same computation so gradients can flow to a
generator output:

- The filtering itself is a single custom op: forward multiplies the
  spectrum by the shared frequency-domain bank, backward applies the same
  bank to the output gradient. That adjoint is exact because every filter
  in the bank is real, so eval and graph responses agree to rounding.
- The per-orientation noise threshold stays differentiable through a
  median op; its bank-dependent factor is constant.
- The reference side of the pair is ordinary image data, so its phase
  congruency and gradient maps come from the exact evaluation path and
  enter the graph as constants.

Restricted to single images (N == 1): the noise median is a per-image
statistic.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from cycleiq import autodiff as ad
from cycleiq import imgio
from cycleiq.autodiff import Tensor
from cycleiq.iqa.fsim import SCHARR_X, T1_PC, T2_GRAD, _gradient_magnitude
from cycleiq.iqa.phasecong import (
    EPSILON,
    MIN_DIM,
    NORIENT,
    NSCALE,
    build_loggabor_bank,
    noise_threshold_constant,
    phase_congruency,
)


@lru_cache(maxsize=4)
def _bank_constants(rows: int, cols: int):
    bank = build_loggabor_bank(rows, cols)
    consts = np.array([noise_threshold_constant(bank, o) for o in range(NORIENT)])
    return bank.filters, consts


def _bank_responses(x: Tensor, filters: np.ndarray) -> Tensor:
    """Even and odd log-Gabor responses of a (1, 1, H, W) tensor.

    Output is (1, 2 * NSCALE * NORIENT, H, W), orientation-major with the
    even (cosine) channel before the odd (sine) per scale. With A the
    linear map x -> ifft2(fft2(x) * F) and the pair (E, O) its real and
    imaginary parts, the adjoint is g -> Re(ifft2(fft2(gE + i gO) * F))
    for each real filter F, summed over channels.
    """
    n_out = 2 * NSCALE * NORIENT
    rows, cols = x.shape[2], x.shape[3]

    def forward(xd):
        spec = np.fft.fft2(xd[0, 0])
        out = np.empty((1, n_out, rows, cols), dtype=xd.dtype)
        idx = 0
        for o in range(NORIENT):
            for s in range(NSCALE):
                resp = np.fft.ifft2(spec * filters[s, o])
                out[0, idx] = resp.real
                out[0, idx + 1] = resp.imag
                idx += 2
        return out

    def make_bwd(needs):
        def run(g):
            acc = np.zeros((rows, cols), dtype=np.complex128)
            idx = 0
            for o in range(NORIENT):
                for s in range(NSCALE):
                    acc += np.fft.fft2(g[0, idx] + 1j * g[0, idx + 1]) * filters[s, o]
                    idx += 2
            dx = np.fft.ifft2(acc).real.astype(g.dtype)
            return (dx[None, None],)

        return run

    return ad.apply_op((x,), forward, make_bwd)


def phase_congruency_graph(x: Tensor) -> Tensor:
    """Differentiable phase congruency of a (1, 1, H, W) tensor."""
    if x.ndim != 4 or x.shape[0] != 1 or x.shape[1] != 1:
        raise ad.ShapeError(f"phase_congruency_graph: expected (1, 1, H, W), got {x.shape}")
    rows, cols = x.shape[2], x.shape[3]
    if min(rows, cols) < MIN_DIM:
        raise ValueError(
            f"phase_congruency_graph: image {(rows, cols)} too small, need {MIN_DIM} per side"
        )
    filters, consts = _bank_constants(rows, cols)
    resp = _bank_responses(x, filters)

    energy_all = None
    an_all = None
    for o in range(NORIENT):
        es, os_ = [], []
        for s in range(NSCALE):
            base = o * 2 * NSCALE + 2 * s
            es.append(ad.slice_channels(resp, base, base + 1))
            os_.append(ad.slice_channels(resp, base + 1, base + 2))
        sum_e = es[0]
        sum_o = os_[0]
        for s in range(1, NSCALE):
            sum_e = ad.add(sum_e, es[s])
            sum_o = ad.add(sum_o, os_[s])
        sum_an = None
        for s in range(NSCALE):
            an = ad.sqrt(ad.add(ad.square(es[s]), ad.square(os_[s])))
            sum_an = an if sum_an is None else ad.add(sum_an, an)
        x_energy = ad.sqrt(ad.add(ad.square(sum_e), ad.square(sum_o))) + EPSILON
        mean_e = ad.divide(sum_e, x_energy)
        mean_o = ad.divide(sum_o, x_energy)
        energy = None
        for s in range(NSCALE):
            aligned = ad.add(
                ad.multiply(es[s], mean_e), ad.multiply(os_[s], mean_o)
            )
            cross = ad.absolute(
                ad.subtract(ad.multiply(es[s], mean_o), ad.multiply(os_[s], mean_e))
            )
            term = ad.subtract(aligned, cross)
            energy = term if energy is None else ad.add(energy, term)
        e2n = ad.add(ad.square(es[0]), ad.square(os_[0]))
        threshold = ad.sqrt(ad.median(e2n)) * float(consts[o])
        energy = ad.relu(ad.subtract(energy, threshold))
        energy_all = energy if energy_all is None else ad.add(energy_all, energy)
        an_all = sum_an if an_all is None else ad.add(an_all, sum_an)
    return ad.divide(energy_all, an_all + EPSILON)


def _gradient_magnitude_graph(x: Tensor) -> Tensor:
    dtype = x.dtype
    kx = Tensor(SCHARR_X[None, None].astype(dtype))
    ky = Tensor(SCHARR_X.T[None, None].astype(dtype))
    gx = ad.conv2d(x, kx, stride=1, padding=1, pad_mode="reflect")
    gy = ad.conv2d(x, ky, stride=1, padding=1, pad_mode="reflect")
    return ad.sqrt(ad.add(ad.square(gx), ad.square(gy)))


def _similarity_graph(live: Tensor, ref: Tensor, c: float) -> Tensor:
    num = 2.0 * ad.multiply(live, ref) + c
    den = ad.add(ad.square(live), ad.square(ref)) + c
    return ad.divide(num, den)


def _block_mean_graph(x: Tensor, f: int) -> Tensor:
    w = Tensor(np.full((1, 1, f, f), 1.0 / (f * f), dtype=x.dtype))
    return ad.conv2d(x, w, stride=f)


def fsim_index(live: Tensor, ref: np.ndarray) -> Tensor:
    """FSIM between a live luminance tensor and a fixed reference plane.

    Args:
        live: (1, 1, H, W) tensor in [0, 255] (gradients flow through it).
        ref: (H, W) reference luminance in [0, 255].

    Returns:
        scalar Tensor in [0, 1].
    """
    ref = np.asarray(ref, dtype=np.float64)
    if live.ndim != 4 or live.shape[0] != 1 or live.shape[1] != 1:
        raise ad.ShapeError(f"fsim_index: expected live (1, 1, H, W), got {live.shape}")
    if live.shape[2:] != ref.shape:
        raise ad.ShapeError(
            f"fsim_index: shape mismatch, live {live.shape} vs ref {ref.shape}"
        )
    f = max(1, round(min(ref.shape) / 256))
    if f > 1:
        live = _block_mean_graph(live, f)
        ref = imgio.downsample_avg(ref, f)

    pc_live = phase_congruency_graph(live)
    g_live = _gradient_magnitude_graph(live)
    pc_ref = Tensor(phase_congruency(ref)[None, None].astype(live.dtype))
    g_ref = Tensor(_gradient_magnitude(ref)[None, None].astype(live.dtype))

    s_l = ad.multiply(
        _similarity_graph(pc_live, pc_ref, T1_PC),
        _similarity_graph(g_live, g_ref, T2_GRAD),
    )
    pcm = ad.maximum(pc_live, pc_ref)
    num = ad.tensor_sum(ad.multiply(s_l, pcm))
    den = ad.tensor_sum(pcm) + 1e-12
    return ad.divide(num, den)
