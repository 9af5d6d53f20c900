"""Walk one image down a distortion ladder and watch the metrics move.

Prints SSIM, FSIM, and GMSD for increasing blur and noise levels.
SSIM and FSIM fall toward 0, GMSD rises from 0; the clean row pins the
identity values.

Run:  python3 demos/metric_ladder.py
"""

import numpy as np

from cycleiq import imgio
from cycleiq.iqa import fsim, gmsd, ssim


def synthetic_photo(seed=0, size=128):
    # smooth background with a few hard-edged objects, like a flat scene
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    img = 70.0 + 120.0 * (0.55 * xx + 0.45 * yy)
    img[size // 5 : size // 2, size // 3 : size - 10] = 205.0
    img[size // 2 :, 12 : size // 4] = 45.0
    img += rng.normal(0.0, 4.0, img.shape)
    return np.clip(img, 0, 255)


def blur(image, sigma):
    kernel = imgio.gaussian_kernel(int(2 * round(3 * sigma) + 1), sigma)
    return imgio.convolve2d_same(image, kernel)


def main():
    ref = synthetic_photo()
    rng = np.random.default_rng(1)

    rows = [("clean", ref)]
    for sigma in (0.5, 1.0, 2.0, 4.0):
        rows.append((f"blur sigma={sigma}", blur(ref, sigma)))
    for std in (5, 15, 40):
        noisy = np.clip(ref + rng.normal(0, std, ref.shape), 0, 255)
        rows.append((f"noise std={std}", noisy))

    print(f"{'distortion':16s} {'ssim':>8s} {'fsim':>8s} {'gmsd':>8s}")
    for label, test in rows:
        print(
            f"{label:16s} {ssim(ref, test).value:8.4f}"
            f" {fsim(ref, test).value:8.4f} {gmsd(ref, test).value:8.4f}"
        )


if __name__ == "__main__":
    main()
