"""Phase congruency via a 2-D log-Gabor filter bank.

Monogenic-style even/odd filter responses over 4 scales and 4 orientations
are combined into a single phase congruency map: energy aligned across
scales, compensated for estimated sensor noise, divided by the total
response amplitude. Constant regions score 0; sharp, phase-aligned
structure (edges, lines) scores near 1 regardless of contrast.

The frequency-domain bank is built once per image size and cached. The
bank also records the per-orientation noise-estimation constants, which
keeps the spatial-kernel route used by the differentiable losses in exact
agreement with this FFT route.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

NSCALE = 4
NORIENT = 4
MIN_WAVELENGTH = 6.0
MULT = 2.0
SIGMA_ONF = 0.55
DTHETA_ON_SIGMA = 1.2
NOISE_K = 2.0
EPSILON = 1e-4
LOWPASS_CUTOFF = 0.45
LOWPASS_ORDER = 15

MIN_DIM = 32


@dataclass
class LogGaborBank:
    """Frequency-domain filters plus noise-model constants.

    Attributes:
        filters: (NSCALE, NORIENT, H, W), real, origin at [0, 0].
        em_n: per-orientation energy of the smallest-scale filter.
        sum_est_an2: per-orientation sum of squared spatial filters.
        sum_est_aiaj: per-orientation sum of cross products between scales.
    """

    shape: tuple
    filters: np.ndarray
    em_n: np.ndarray
    sum_est_an2: np.ndarray
    sum_est_aiaj: np.ndarray


def _frequency_grid(rows: int, cols: int):
    if cols % 2:
        xr = np.arange(-(cols - 1) / 2, (cols - 1) / 2 + 1) / (cols - 1)
    else:
        xr = np.arange(-cols / 2, cols / 2) / cols
    if rows % 2:
        yr = np.arange(-(rows - 1) / 2, (rows - 1) / 2 + 1) / (rows - 1)
    else:
        yr = np.arange(-rows / 2, rows / 2) / rows
    x, y = np.meshgrid(xr, yr)
    radius = np.fft.ifftshift(np.sqrt(x * x + y * y))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    return radius, theta


@lru_cache(maxsize=8)
def build_loggabor_bank(rows: int, cols: int) -> LogGaborBank:
    """Construct (and cache) the filter bank for one image size."""
    radius, theta = _frequency_grid(rows, cols)
    lowpass = 1.0 / (1.0 + (radius / LOWPASS_CUTOFF) ** (2 * LOWPASS_ORDER))
    radius = radius.copy()
    radius[0, 0] = 1.0  # avoid log(0) at the DC bin; the filter is zeroed there

    log_gabors = []
    denom = 2.0 * np.log(SIGMA_ONF) ** 2
    for s in range(NSCALE):
        wavelength = MIN_WAVELENGTH * MULT**s
        f0 = 1.0 / wavelength
        lg = np.exp(-(np.log(radius / f0) ** 2) / denom)
        lg *= lowpass
        lg[0, 0] = 0.0
        log_gabors.append(lg)

    sin_t, cos_t = np.sin(theta), np.cos(theta)
    theta_sigma = np.pi / NORIENT / DTHETA_ON_SIGMA
    spreads = []
    for o in range(NORIENT):
        angle = o * np.pi / NORIENT
        ds = sin_t * np.cos(angle) - cos_t * np.sin(angle)
        dc = cos_t * np.cos(angle) + sin_t * np.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        spreads.append(np.exp(-(dtheta**2) / (2.0 * theta_sigma**2)))

    filters = np.empty((NSCALE, NORIENT, rows, cols))
    for s in range(NSCALE):
        for o in range(NORIENT):
            filters[s, o] = log_gabors[s] * spreads[o]

    # Spatial-domain filter stacks drive the analytic noise model.
    scale = np.sqrt(rows * cols)
    em_n = np.empty(NORIENT)
    sum_an2 = np.empty(NORIENT)
    sum_aiaj = np.empty(NORIENT)
    for o in range(NORIENT):
        spatial = [
            np.real(np.fft.ifft2(filters[s, o])) * scale for s in range(NSCALE)
        ]
        em_n[o] = float(np.sum(filters[0, o] ** 2))
        sum_an2[o] = float(sum(np.sum(f * f) for f in spatial))
        cross = 0.0
        for i in range(NSCALE - 1):
            for j in range(i + 1, NSCALE):
                cross += float(np.sum(spatial[i] * spatial[j]))
        sum_aiaj[o] = cross
    return LogGaborBank(
        shape=(rows, cols),
        filters=filters,
        em_n=em_n,
        sum_est_an2=sum_an2,
        sum_est_aiaj=sum_aiaj,
    )


def noise_threshold_constant(bank: LogGaborBank, orient: int) -> float:
    """Multiplier c such that the noise threshold is c * sqrt(median |EO_1|^2).

    Derivation: the estimated noise energy is linear in the median of the
    smallest-scale squared response, so the whole Rayleigh-statistics
    threshold collapses to one constant per orientation.
    """
    noise_factor = (
        2.0 * bank.sum_est_an2[orient] + 4.0 * bank.sum_est_aiaj[orient]
    ) / (np.log(2.0) * bank.em_n[orient])
    tau_factor = np.sqrt(noise_factor / 2.0)
    return float(
        tau_factor * (np.sqrt(np.pi / 2.0) + NOISE_K * np.sqrt(2.0 - np.pi / 2.0)) / 1.7
    )


def phase_congruency(plane: np.ndarray) -> np.ndarray:
    """Phase congruency map of a 2-D luminance plane.

    Args:
        plane: (H, W) array, both dims at least 32.

    Returns:
        (H, W) map in [0, 1]. Constant inputs give 0 everywhere, and
        adding a constant offset to the input leaves the map unchanged.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError(f"phase_congruency: expected 2-D array, got {plane.shape}")
    rows, cols = plane.shape
    if min(rows, cols) < MIN_DIM:
        raise ValueError(
            f"phase_congruency: image {plane.shape} too small, need {MIN_DIM} per side"
        )
    bank = build_loggabor_bank(rows, cols)
    spectrum = np.fft.fft2(plane)

    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))
    for o in range(NORIENT):
        e = np.empty((NSCALE, rows, cols))
        od = np.empty((NSCALE, rows, cols))
        an = np.empty((NSCALE, rows, cols))
        for s in range(NSCALE):
            eo = np.fft.ifft2(spectrum * bank.filters[s, o])
            e[s] = eo.real
            od[s] = eo.imag
            an[s] = np.abs(eo)
        sum_e = e.sum(axis=0)
        sum_o = od.sum(axis=0)
        sum_an = an.sum(axis=0)
        x_energy = np.sqrt(sum_e**2 + sum_o**2) + EPSILON
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for s in range(NSCALE):
            energy += e[s] * mean_e + od[s] * mean_o - np.abs(
                e[s] * mean_o - od[s] * mean_e
            )
        median_e2n = float(np.median(e[0] ** 2 + od[0] ** 2))
        threshold = noise_threshold_constant(bank, o) * np.sqrt(median_e2n)
        energy_all += np.maximum(energy - threshold, 0.0)
        an_all += sum_an
    return energy_all / (an_all + EPSILON)
