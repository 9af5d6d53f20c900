"""Image containers, codecs and small signal-processing utilities.

Images are float64 arrays shaped (H, W, C) with C in {1, 3}, values in
[0, 255]. Two file formats are supported: 8-bit PNG (via Pillow) and
binary PPM (P6, maxval 255, parsed here because the format is trivial and
round-trip fidelity matters for dataset snapshots).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.ndimage
from PIL import Image as _PILImage

__all__ = [
    "Image",
    "load_image",
    "save_image",
    "rgb_to_gray",
    "rgb_to_yiq",
    "downsample_avg",
    "convolve2d_same",
    "gaussian_kernel",
    "fft2",
    "ifft2",
]

# NTSC YIQ transform. Row order Y, I, Q.
_YIQ = np.array(
    [
        [0.299, 0.587, 0.114],
        [0.596, -0.274, -0.322],
        [0.211, -0.523, 0.312],
    ]
)

_SIXTEEN_BIT_MODES = {"I", "I;16", "I;16B", "I;16L", "I;16N"}


@dataclass
class Image:
    """Float image in display range.

    Attributes:
        data: (H, W, C) float64 array, C is 1 or 3, values in [0, 255].
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"Image: expected (H, W, 1|3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Image: empty spatial dims {arr.shape}")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def gray(self) -> np.ndarray:
        """Luminance plane (H, W)."""
        if self.channels == 1:
            return self.data[:, :, 0]
        return rgb_to_gray(self.data)


def _as_plane_or_image(arr) -> Image:
    if isinstance(arr, Image):
        return arr
    return Image(np.asarray(arr, dtype=np.float64))


def load_image(path: str | os.PathLike) -> Image:
    """Load an 8-bit PNG or binary PPM file.

    Raises:
        ValueError: for 16-bit inputs ("unsupported bit depth"), unknown
            formats, or malformed PPM streams.
        FileNotFoundError: if the path does not exist.
    """
    path = os.fspath(path)
    lower = path.lower()
    if lower.endswith(".ppm"):
        return _load_ppm(path)
    if lower.endswith(".png"):
        return _load_png(path)
    raise ValueError(f"unsupported image format: {path!r} (expected .png or .ppm)")


def save_image(image, path: str | os.PathLike) -> None:
    """Write an image as 8-bit PNG or binary PPM, chosen by extension.

    Values are clipped to [0, 255] and rounded to the nearest integer.
    """
    image = _as_plane_or_image(image)
    path = os.fspath(path)
    arr = np.clip(np.round(image.data), 0, 255).astype(np.uint8)
    lower = path.lower()
    if lower.endswith(".ppm"):
        _save_ppm(arr, path)
    elif lower.endswith(".png"):
        if arr.shape[2] == 1:
            _PILImage.fromarray(arr[:, :, 0], mode="L").save(path)
        else:
            _PILImage.fromarray(arr, mode="RGB").save(path)
    else:
        raise ValueError(f"unsupported image format: {path!r} (expected .png or .ppm)")


def _load_png(path: str) -> Image:
    with _PILImage.open(path) as img:
        if img.mode in _SIXTEEN_BIT_MODES:
            raise ValueError(f"unsupported bit depth in {path!r} (8-bit only)")
        if img.mode in ("L",):
            arr = np.asarray(img, dtype=np.float64)[:, :, None]
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return Image(arr)


def _read_ppm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # Skip whitespace and '#' comments, then read one token.
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("malformed PPM header: unexpected end of file")
    return buf[start:pos], pos


def _load_ppm(path: str) -> Image:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_ppm_token(buf, 0)
    if magic != b"P6":
        raise ValueError(f"not a binary PPM (P6) file: {path!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_ppm_token(buf, pos)
        if not tok.isdigit():
            raise ValueError(f"malformed PPM header token {tok!r} in {path!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported bit depth in {path!r} (maxval {maxval}, want 255)")
    if width < 1 or height < 1:
        raise ValueError(f"bad PPM dimensions {width}x{height} in {path!r}")
    pos += 1  # single whitespace after maxval
    expect = width * height * 3
    raster = buf[pos : pos + expect]
    if len(raster) != expect:
        raise ValueError(
            f"truncated PPM raster in {path!r}: got {len(raster)} of {expect} bytes"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return Image(arr.astype(np.float64))


def _save_ppm(arr: np.ndarray, path: str) -> None:
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    """NTSC luminance: 0.299 R + 0.587 G + 0.114 B."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb_to_gray: expected (H, W, 3), got {rgb.shape}")
    return rgb @ _YIQ[0]


def rgb_to_yiq(rgb: np.ndarray) -> np.ndarray:
    """RGB to YIQ, same shape, standard NTSC matrix.

    Pure red (255, 0, 0) maps to Y=76.245, I=151.98, Q=53.805.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb_to_yiq: expected (H, W, 3), got {rgb.shape}")
    return rgb @ _YIQ.T


def downsample_avg(plane: np.ndarray, factor: int) -> np.ndarray:
    """Downsample by block averaging; trailing rows/cols that do not fill a
    block are dropped."""
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"downsample_avg: factor must be a positive int, got {factor}")
    factor = int(factor)
    if factor == 1:
        return np.asarray(plane, dtype=np.float64).copy()
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape[0] // factor, plane.shape[1] // factor
    if h < 1 or w < 1:
        raise ValueError(
            f"downsample_avg: factor {factor} larger than input {plane.shape}"
        )
    trimmed = plane[: h * factor, : w * factor]
    if plane.ndim == 2:
        return trimmed.reshape(h, factor, w, factor).mean(axis=(1, 3))
    return trimmed.reshape(h, factor, w, factor, -1).mean(axis=(1, 3))


def convolve2d_same(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """True 2-D convolution, same-size output, symmetric edge reflection.

    Kernel dimensions must be odd so the output grid aligns with the input.
    """
    plane = np.asarray(plane, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if plane.ndim != 2 or kernel.ndim != 2:
        raise ValueError(
            f"convolve2d_same: expected 2-D arrays, got {plane.shape}, {kernel.shape}"
        )
    if kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError(f"convolve2d_same: kernel dims must be odd, got {kernel.shape}")
    # scipy 'reflect' is edge-inclusive reflection (d c b a | a b c d).
    return scipy.ndimage.convolve(plane, kernel, mode="reflect")


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Odd-sized 2-D Gaussian, normalized to unit sum."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"gaussian_kernel: size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ValueError(f"gaussian_kernel: sigma must be positive, got {sigma}")
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g1 = np.exp(-(coords**2) / (2.0 * sigma**2))
    k = np.outer(g1, g1)
    return k / k.sum()


def fft2(plane: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2-D DFT."""
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ValueError(f"fft2: expected 2-D array, got {plane.shape}")
    return np.fft.fft2(plane)


def ifft2(spectrum: np.ndarray) -> np.ndarray:
    """Inverse 2-D DFT (1/N normalized, numpy convention)."""
    spectrum = np.asarray(spectrum)
    if spectrum.ndim != 2:
        raise ValueError(f"ifft2: expected 2-D array, got {spectrum.shape}")
    return np.fft.ifft2(spectrum)
