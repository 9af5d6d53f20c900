"""Translation generator and patch discriminator.

The generator is a 4*depth-layer hourglass. Each encoder stage is a
stride-2 conv (kernel 4) that halves resolution followed by a stride-1
conv (kernel 3) that doubles width; the decoder mirrors the stages with
transposed convs and concatenates encoder layer i onto the input of
decoder layer 4*depth - i. With the default depth 4 that is the 16-layer
network with skips i <-> 16 - i. Encoder activations are leaky ReLU 0.2,
decoder ReLU, output tanh; instance norm everywhere except the first and
last layer. Inputs and outputs live in [-1, 1].

The discriminator is a 4-layer patch critic (strides 2, 2, 1, 1) with a
raw score map output: no sigmoid, as both the least-squares and the
logarithmic adversarial objectives expect unbounded scores.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from cycleiq import autodiff as ad
from cycleiq.autodiff import Tensor

__all__ = [
    "GeneratorConfig",
    "DiscriminatorConfig",
    "init_generator",
    "init_discriminator",
    "generator_forward",
    "encoder_features",
    "discriminator_forward",
    "translate_image",
    "save_params",
    "load_params",
    "CycleModel",
    "init_cycle_model",
    "MODEL_PARTS",
    "INIT_SCALE",
]

INIT_SCALE = 0.05
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    base_channels: int = 16
    depth: int = 3

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"generator depth must be >= 1, got {self.depth}")

    @property
    def n_layers(self) -> int:
        return 4 * self.depth

    def encoder_out_channels(self) -> list:
        """Output width of each encoder layer, 1-indexed via [i - 1]."""
        outs = []
        for stage in range(1, self.depth + 1):
            width = self.base_channels * 2 ** (stage - 1)
            outs.append(width)  # stride-2 layer keeps stage width
            outs.append(width * 2)  # stride-1 layer doubles it
        return outs


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    base_channels: int = 32


def _uniform(rng: np.random.Generator, shape) -> Tensor:
    data = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(np.float32)
    return Tensor(data, requires_grad=True)


def _generator_layer_shapes(cfg: GeneratorConfig):
    """Yield (name, weight_shape, has_bias) for every generator layer."""
    enc_out = cfg.encoder_out_channels()
    n = cfg.n_layers
    shapes = []
    prev = cfg.in_channels
    for i in range(1, 2 * cfg.depth + 1):
        out = enc_out[i - 1]
        if i % 2 == 1:  # stride-2, kernel 4
            shapes.append((f"l{i:02d}", (out, prev, 4, 4), i == 1))
        else:  # stride-1, kernel 3
            shapes.append((f"l{i:02d}", (out, prev, 3, 3), False))
        prev = out
    # Decoder: skip from encoder layer n - j joins every layer but the head.
    for j in range(2 * cfg.depth + 1, n + 1):
        skip = n - j
        cin = prev + (enc_out[skip - 1] if skip >= 1 else 0)
        if j == n:
            out = cfg.in_channels
        elif skip == 1:
            out = cfg.base_channels
        else:
            out = enc_out[skip - 2]
        if (j - 2 * cfg.depth) % 2 == 1:  # transposed conv, kernel 4: (in, out, kh, kw)
            shapes.append((f"l{j:02d}", (cin, out, 4, 4), False))
        else:
            shapes.append((f"l{j:02d}", (out, cin, 3, 3), j == n))
        prev = out
    return shapes


def init_generator(cfg: GeneratorConfig, seed: int) -> dict:
    """Fresh generator parameters, uniform in [-0.05, 0.05]."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, wshape, has_bias in _generator_layer_shapes(cfg):
        params[f"{name}.w"] = _uniform(rng, wshape)
        if has_bias:
            # Bias layers are plain convs, so the output width is axis 0.
            params[f"{name}.b"] = _uniform(rng, (1, wshape[0], 1, 1))
    return params


def _check_generator_input(x: Tensor, cfg: GeneratorConfig):
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ad.ShapeError(
            f"generator: expected (N, {cfg.in_channels}, H, W), got {x.shape}"
        )
    div = 2**cfg.depth
    if x.shape[2] % div or x.shape[3] % div:
        raise ad.ShapeError(
            f"generator: spatial dims {x.shape[2]}x{x.shape[3]} must be "
            f"divisible by {div}"
        )


def generator_forward(params: dict, x: Tensor, cfg: GeneratorConfig, taps=()):
    """Run the generator.

    Args:
        params: parameter dict from ``init_generator``.
        x: (N, C, H, W) in [-1, 1].
        taps: layer indices whose post-activation features to return.

    Returns:
        (output, features) where output is (N, C, H, W) in (-1, 1) and
        features maps each requested tap index to its Tensor.
    """
    _check_generator_input(x, cfg)
    n = cfg.n_layers
    taps = tuple(taps)
    for t in taps:
        if not (1 <= t <= n):
            raise ad.ShapeError(f"generator: tap layer {t} outside 1..{n}")
    feats = {}
    skips = {}
    h = x
    for i in range(1, 2 * cfg.depth + 1):
        w = params[f"l{i:02d}.w"]
        if i % 2 == 1:
            h = ad.conv2d(h, w, stride=2, padding=1)
        else:
            h = ad.conv2d(h, w, stride=1, padding=1)
        if i == 1:
            h = ad.add(h, params["l01.b"])
        else:
            h = ad.instance_norm(h)
        h = ad.leaky_relu(h, LEAKY_SLOPE)
        skips[i] = h
        if i in taps:
            feats[i] = h
    for j in range(2 * cfg.depth + 1, n + 1):
        skip = n - j
        if skip >= 1:
            h = ad.concat_channels(h, skips[skip])
        w = params[f"l{j:02d}.w"]
        if (j - 2 * cfg.depth) % 2 == 1:
            h = ad.conv_transpose2d(h, w, stride=2, padding=1)
        else:
            h = ad.conv2d(h, w, stride=1, padding=1)
        if j == n:
            h = ad.add(h, params[f"l{n:02d}.b"])
            h = ad.tanh(h)
        else:
            h = ad.instance_norm(h)
            h = ad.relu(h)
        if j in taps:
            feats[j] = h
    return h, feats


def encoder_features(params: dict, x: Tensor, cfg: GeneratorConfig, layer: int) -> Tensor:
    """Post-activation features of one encoder layer (cheaper than a full
    forward when only the tap is needed)."""
    if not (1 <= layer <= 2 * cfg.depth):
        raise ad.ShapeError(
            f"encoder_features: layer {layer} outside encoder range 1..{2 * cfg.depth}"
        )
    _check_generator_input(x, cfg)
    h = x
    for i in range(1, layer + 1):
        w = params[f"l{i:02d}.w"]
        h = ad.conv2d(h, w, stride=2 if i % 2 == 1 else 1, padding=1)
        if i == 1:
            h = ad.add(h, params["l01.b"])
        else:
            h = ad.instance_norm(h)
        h = ad.leaky_relu(h, LEAKY_SLOPE)
    return h


_DISC_SPECS = (
    # (stride, normalize) per layer; widths grow 1x, 2x, 4x then collapse to 1.
    (2, False),
    (2, True),
    (1, True),
    (1, False),
)


def init_discriminator(cfg: DiscriminatorConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    widths = (
        cfg.base_channels,
        cfg.base_channels * 2,
        cfg.base_channels * 4,
        1,
    )
    params = {}
    prev = cfg.in_channels
    for i, ((_, norm), out) in enumerate(zip(_DISC_SPECS, widths), start=1):
        params[f"d{i}.w"] = _uniform(rng, (out, prev, 4, 4))
        if not norm:
            params[f"d{i}.b"] = _uniform(rng, (1, out, 1, 1))
        prev = out
    return params


def discriminator_forward(params: dict, x: Tensor, cfg: DiscriminatorConfig) -> Tensor:
    """Raw patch score map, shape (N, 1, H', W')."""
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ad.ShapeError(
            f"discriminator: expected (N, {cfg.in_channels}, H, W), got {x.shape}"
        )
    if min(x.shape[2], x.shape[3]) < 16:
        raise ad.ShapeError(f"discriminator: input {x.shape} too small, need 16 per side")
    h = x
    for i, (stride, norm) in enumerate(_DISC_SPECS, start=1):
        h = ad.conv2d(h, params[f"d{i}.w"], stride=stride, padding=1)
        if norm:
            h = ad.instance_norm(h)
        else:
            h = ad.add(h, params[f"d{i}.b"])
        if i < len(_DISC_SPECS):
            h = ad.leaky_relu(h, LEAKY_SLOPE)
    return h


def translate_image(params: dict, cfg: GeneratorConfig, image: np.ndarray) -> np.ndarray:
    """Apply the generator to one (H, W, C) image in [0, 255]."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    x = Tensor(arr.transpose(2, 0, 1)[None] / 127.5 - 1.0)
    out, _ = generator_forward(params, x, cfg)
    back = (out.data[0].transpose(1, 2, 0) + 1.0) * 127.5
    return np.clip(back.astype(np.float64), 0.0, 255.0)


def save_params(path, params: dict, meta: dict | None = None) -> None:
    """Checkpoint as an uncompressed npz; byte-identical for equal content."""
    arrays = {f"p/{k}": v.data for k, v in params.items()}
    if meta:
        import json

        arrays["meta"] = np.frombuffer(
            json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
        )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path):
    """Load a checkpoint; returns (params, meta)."""
    import json

    with np.load(path) as z:
        params = {}
        meta = None
        for key in z.files:
            if key == "meta":
                meta = json.loads(z[key].tobytes().decode())
            elif key.startswith("p/"):
                params[key[2:]] = Tensor(z[key], requires_grad=True)
            else:
                raise ValueError(f"unexpected entry {key!r} in checkpoint {path!r}")
    return params, meta


MODEL_PARTS = ("g_u", "g_v", "d_u", "d_v")


@dataclass
class CycleModel:
    """The two generators and two discriminators of one translation pair.

    ``g_u`` maps domain U to V, ``g_v`` maps V back to U; ``d_u`` scores
    domain-U images, ``d_v`` domain-V images.
    """

    gen_cfg: GeneratorConfig
    disc_cfg: DiscriminatorConfig
    g_u: dict
    g_v: dict
    d_u: dict
    d_v: dict

    def part(self, name: str) -> dict:
        if name not in MODEL_PARTS:
            raise KeyError(f"unknown model part {name!r}, expected one of {MODEL_PARTS}")
        return getattr(self, name)

    def named_parameters(self, parts=MODEL_PARTS):
        """(qualified name, Tensor) pairs in deterministic order."""
        for part in parts:
            d = self.part(part)
            for key in sorted(d):
                yield f"{part}/{key}", d[key]

    def save(self, path, meta: dict | None = None) -> None:
        flat = {f"{p}/{k}": v for p in MODEL_PARTS for k, v in self.part(p).items()}
        full = dict(meta or {})
        full["gen_cfg"] = asdict(self.gen_cfg)
        full["disc_cfg"] = asdict(self.disc_cfg)
        save_params(path, flat, full)

    @classmethod
    def load(cls, path) -> tuple["CycleModel", dict]:
        flat, meta = load_params(path)
        if not meta or "gen_cfg" not in meta or "disc_cfg" not in meta:
            raise ValueError(f"checkpoint {path!r} lacks model configuration metadata")
        split = {p: {} for p in MODEL_PARTS}
        for key, tensor in flat.items():
            part, _, rest = key.partition("/")
            if part not in split or not rest:
                raise ValueError(f"unexpected parameter {key!r} in checkpoint {path!r}")
            split[part][rest] = tensor
        gen_cfg = GeneratorConfig(**meta.pop("gen_cfg"))
        disc_cfg = DiscriminatorConfig(**meta.pop("disc_cfg"))
        return cls(gen_cfg, disc_cfg, **split), meta


def init_cycle_model(
    gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, seed: int
) -> CycleModel:
    """Four freshly initialized networks with per-part derived seeds."""
    return CycleModel(
        gen_cfg,
        disc_cfg,
        g_u=init_generator(gen_cfg, seed),
        g_v=init_generator(gen_cfg, seed + 1),
        d_u=init_discriminator(disc_cfg, seed + 2),
        d_v=init_discriminator(disc_cfg, seed + 3),
    )
