"""Synthetic two-domain image datasets at desk scale.

Three 32x32 tasks, each with unpaired training halves and a held-out
paired split kept only for evaluation:

- shapes_inverted: colored shapes vs their exact intensity inversions.
- texture_labels: per-region textures vs flat label maps over the same
  region geometry (paired split only; training halves use independent
  geometries).
- clean_noisy: clean shapes vs the same content plus Gaussian noise.

All pixel values are quantized to 8-bit at generation time, so arrays
round-trip PNG encoding exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from cycleiq import imgio

TASKS = ("shapes_inverted", "texture_labels", "clean_noisy")
IMAGE_SIZE = 32

# saturated, mutually distant label colors
_PALETTE = np.array(
    [
        [200, 60, 60],
        [60, 170, 60],
        [60, 80, 200],
        [210, 190, 70],
        [150, 70, 190],
        [70, 190, 190],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class DatasetSpec:
    """What to synthesize: task name, training images per domain, and the
    noise variance (in [0, 1] intensity units) for the noisy task."""

    task: str
    size: int = 200
    noise_var: float = 0.001

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.size < 5:
            raise ValueError("DatasetSpec.size must be >= 5 (eval split is size // 5)")
        if self.noise_var < 0:
            raise ValueError("DatasetSpec.noise_var must be >= 0")

    @property
    def eval_size(self) -> int:
        return self.size // 5


@dataclass
class DomainData:
    """In-memory dataset: unpaired training halves plus aligned eval pairs.

    Arrays are (count, 32, 32, 3) float64 with 8-bit integer values.
    """

    train_u: np.ndarray
    train_v: np.ndarray
    eval_u: np.ndarray
    eval_v: np.ndarray

    def sample(self, rng: np.random.Generator, m: int, domain: str) -> np.ndarray:
        """Uniform-with-replacement minibatch from one training half."""
        if domain == "u":
            pool = self.train_u
        elif domain == "v":
            pool = self.train_v
        else:
            raise ValueError(f"domain must be 'u' or 'v', got {domain!r}")
        idx = rng.integers(0, pool.shape[0], size=m)
        return pool[idx]


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img), 0, 255)


def _oriented_wave(rng: np.random.Generator, yy, xx) -> np.ndarray:
    freq = rng.uniform(0.15, 0.45)
    angle = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    return np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)


def _shape_image(rng: np.random.Generator, size: int = IMAGE_SIZE) -> np.ndarray:
    """Flat background with a few filled shapes carrying interior texture.

    The background stays flat so structure metrics keep their dynamic
    range: a round trip that mangles content scores visibly low. The
    shape interiors carry moderate oriented texture, fine detail that a
    generator only reproduces faithfully when the objective anchors it
    pixel-wise. Texture amplitude matters here; saturating the whole
    frame with it flattens the metric instead.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.ones((size, size, 3)) * rng.uniform(40, 215, size=3)
    for _ in range(rng.integers(3, 6)):
        color = rng.uniform(25, 230, size=3)
        cy, cx = rng.uniform(4, size - 4, size=2)
        if rng.uniform() < 0.5:
            r = rng.uniform(3, 8)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        else:
            hh, hw = rng.uniform(2, 7, size=2)
            mask = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
        tex = color + rng.uniform(16, 30) * _oriented_wave(rng, yy, xx)[..., None]
        img[mask] = tex[mask]
    img += rng.normal(0, 2, size=(size, size, 1))
    return _quantize(img)


def _region_geometry(rng: np.random.Generator, size: int = IMAGE_SIZE) -> np.ndarray:
    """Integer region-id map from recursive axis-aligned splits."""
    regions = np.zeros((size, size), dtype=np.int64)
    boxes = [(0, 0, size, size)]
    for _ in range(rng.integers(2, 5)):
        i = int(rng.integers(0, len(boxes)))
        y0, x0, y1, x1 = boxes.pop(i)
        if rng.uniform() < 0.5 and y1 - y0 >= 12:
            cut = int(rng.integers(y0 + 5, y1 - 5))
            boxes += [(y0, x0, cut, x1), (cut, x0, y1, x1)]
        elif x1 - x0 >= 12:
            cut = int(rng.integers(x0 + 5, x1 - 5))
            boxes += [(y0, x0, y1, cut), (y0, cut, y1, x1)]
        else:
            boxes.append((y0, x0, y1, x1))
    for rid, (y0, x0, y1, x1) in enumerate(boxes):
        regions[y0:y1, x0:x1] = rid
    return regions


def _texture_label_pair(rng: np.random.Generator, size: int = IMAGE_SIZE):
    """A textured image and its flat label map over shared geometry."""
    regions = _region_geometry(rng, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    label = np.zeros((size, size, 3))
    textured = np.zeros((size, size, 3))
    for rid in np.unique(regions):
        mask = regions == rid
        color = _PALETTE[rng.integers(0, len(_PALETTE))]
        label[mask] = color
        freq = rng.uniform(0.15, 0.45)
        angle = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
        amp = rng.uniform(25, 60)
        tex = color[None, None] + amp * wave[..., None]
        tex += rng.normal(0, 6, size=(size, size, 1))
        textured[mask] = tex[mask]
    return _quantize(textured), _quantize(label)


def _noisy_version(rng: np.random.Generator, clean: np.ndarray, var: float) -> np.ndarray:
    sigma = 255.0 * np.sqrt(var)
    return _quantize(clean + rng.normal(0, sigma, size=clean.shape))


def generate_dataset(spec: DatasetSpec, seed: int) -> DomainData:
    """All four splits from a single seeded stream; training halves come
    from independent draws so no hidden pairing exists."""
    rng = np.random.default_rng(seed)
    n, k = spec.size, spec.eval_size

    if spec.task == "shapes_inverted":
        train_u = np.stack([_shape_image(rng) for _ in range(n)])
        train_v = 255.0 - np.stack([_shape_image(rng) for _ in range(n)])
        eval_u = np.stack([_shape_image(rng) for _ in range(k)])
        eval_v = 255.0 - eval_u
    elif spec.task == "texture_labels":
        train_u = np.stack([_texture_label_pair(rng)[0] for _ in range(n)])
        train_v = np.stack([_texture_label_pair(rng)[1] for _ in range(n)])
        pairs = [_texture_label_pair(rng) for _ in range(k)]
        eval_u = np.stack([p[0] for p in pairs])
        eval_v = np.stack([p[1] for p in pairs])
    else:
        train_u = np.stack([_shape_image(rng) for _ in range(n)])
        train_v = np.stack(
            [_noisy_version(rng, _shape_image(rng), spec.noise_var) for _ in range(n)]
        )
        eval_u = np.stack([_shape_image(rng) for _ in range(k)])
        eval_v = np.stack([_noisy_version(rng, img, spec.noise_var) for img in eval_u])

    return DomainData(train_u, train_v, eval_u, eval_v)


def _write_split(images: np.ndarray, directory: str, stem: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for i, img in enumerate(images):
        imgio.save_image(img, os.path.join(directory, f"{stem}_{i:04d}.png"))


def make_synthetic_dataset(spec: DatasetSpec, seed: int, out_dir) -> dict:
    """Write the dataset as PNG directories.

    Layout: train/u, train/v with domain-stem names; eval/u, eval/v with
    matching pair_NNNN.png names so pair scoring can align by filename.

    Returns:
        dict of split directories plus the generation parameters.
    """
    out_dir = os.fspath(out_dir)
    data = generate_dataset(spec, seed)
    paths = {
        "train_u": os.path.join(out_dir, "train", "u"),
        "train_v": os.path.join(out_dir, "train", "v"),
        "eval_u": os.path.join(out_dir, "eval", "u"),
        "eval_v": os.path.join(out_dir, "eval", "v"),
    }
    _write_split(data.train_u, paths["train_u"], "u")
    _write_split(data.train_v, paths["train_v"], "v")
    _write_split(data.eval_u, paths["eval_u"], "pair")
    _write_split(data.eval_v, paths["eval_v"], "pair")
    meta_path = os.path.join(out_dir, "dataset.txt")
    with open(meta_path, "w") as fh:
        fh.write(f"task = {spec.task}\n")
        fh.write(f"size = {spec.size}\n")
        fh.write(f"noise_var = {spec.noise_var!r}\n")
        fh.write(f"seed = {seed}\n")
    return {**paths, "meta": meta_path, "task": spec.task, "size": spec.size}


def _read_split(directory: str) -> np.ndarray:
    names = sorted(f for f in os.listdir(directory) if f.endswith(".png"))
    if not names:
        raise FileNotFoundError(f"no PNG images under {directory}")
    return np.stack(
        [imgio.load_image(os.path.join(directory, f)).data for f in names]
    )


def load_dataset(root) -> DomainData:
    """Read a make_synthetic_dataset layout back into memory."""
    root = os.fspath(root)
    return DomainData(
        train_u=_read_split(os.path.join(root, "train", "u")),
        train_v=_read_split(os.path.join(root, "train", "v")),
        eval_u=_read_split(os.path.join(root, "eval", "u")),
        eval_v=_read_split(os.path.join(root, "eval", "v")),
    )
