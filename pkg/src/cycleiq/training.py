"""Alternating two-player training: n critic steps, then one generator step.

Per iteration the critic phase draws fresh minibatches, updates both
discriminators from the least-squares critic objective, and clips their
weights to [-c, c]. The generator phase draws its own fresh minibatches
and updates both generators from the variant's full objective. All
updates use RMSProp; parameters are rebound to new tensors (tensors are
immutable values), so the other player's parameters provably never move
during a phase.

Forward and updates run at 32-bit; gradient checking happens elsewhere
at 64-bit.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from cycleiq import losses
from cycleiq.autodiff import Tape, Tensor, backward
from cycleiq.datasets import DatasetSpec, DomainData
from cycleiq.iqa import as_gray
from cycleiq.iqa.niqe import NiqeModel, fit_niqe
from cycleiq.losses import LossWeights
from cycleiq.nets import (
    CycleModel,
    DiscriminatorConfig,
    GeneratorConfig,
    discriminator_forward,
    generator_forward,
    init_cycle_model,
)

RHO = 0.9
EPS = 1e-8

# patch size for naturalness models fitted on 32x32 toy images
TOY_NIQE_PATCH = 16


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; carries where and the last healthy values."""

    def __init__(self, iteration: int, name: str, last_finite: dict):
        self.iteration = iteration
        self.name = name
        self.last_finite = dict(last_finite)
        super().__init__(
            f"training diverged at iteration {iteration}: {name} is not finite; "
            f"last finite losses: {self.last_finite or 'none recorded'}"
        )


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "qgan_a"
    iterations: int = 2000
    batch_size: int = 1
    critic_iters: int = 5
    learning_rate: float = 5e-5
    clip: float = 0.05
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    dataset: DatasetSpec = field(default_factory=lambda: DatasetSpec("shapes_inverted"))
    checkpoint_interval: int = 500

    def __post_init__(self):
        if self.variant not in losses.VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}, expected one of {losses.VARIANTS}"
            )
        if not (2 <= self.critic_iters <= 5):
            raise ValueError("TrainConfig.critic_iters must be in [2, 5]")
        if not (0.01 <= self.clip <= 0.1):
            raise ValueError("TrainConfig.clip must be in [0.01, 0.1]")
        if self.batch_size < 1:
            raise ValueError("TrainConfig.batch_size must be >= 1")
        if self.iterations < 1:
            raise ValueError("TrainConfig.iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("TrainConfig.learning_rate must be > 0")
        if self.checkpoint_interval < 1:
            raise ValueError("TrainConfig.checkpoint_interval must be >= 1")


# plain-text config file keys, all optional, defaults as in TrainConfig
CONFIG_KEYS = (
    "variant",
    "iterations",
    "batch_size",
    "critic_iters",
    "learning_rate",
    "clip",
    "seed",
    "checkpoint_interval",
    "theta_u",
    "theta_v",
    "alpha_u",
    "alpha_v",
    "beta_u",
    "beta_v",
    "tap_layer",
    "dataset_task",
    "dataset_size",
    "noise_var",
)

_INT_KEYS = {
    "iterations",
    "batch_size",
    "critic_iters",
    "seed",
    "checkpoint_interval",
    "tap_layer",
    "dataset_size",
}
_FLOAT_KEYS = {
    "learning_rate",
    "clip",
    "theta_u",
    "theta_v",
    "alpha_u",
    "alpha_v",
    "beta_u",
    "beta_v",
    "noise_var",
}


def parse_config_text(text: str) -> dict:
    """key = value lines; # starts a comment; unknown keys rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in _INT_KEYS:
            out[key] = int(value)
        elif key in _FLOAT_KEYS:
            out[key] = float(value)
        else:
            out[key] = value
    return out


def config_from_mapping(mapping: dict) -> TrainConfig:
    """Build a TrainConfig from flat key/value pairs (missing keys keep
    defaults)."""
    mapping = dict(mapping)
    weight_kwargs = {
        k: mapping.pop(k)
        for k in ("theta_u", "theta_v", "alpha_u", "alpha_v", "beta_u", "beta_v", "tap_layer")
        if k in mapping
    }
    dataset_kwargs = {}
    if "dataset_task" in mapping:
        dataset_kwargs["task"] = mapping.pop("dataset_task")
    if "dataset_size" in mapping:
        dataset_kwargs["size"] = mapping.pop("dataset_size")
    if "noise_var" in mapping:
        dataset_kwargs["noise_var"] = mapping.pop("noise_var")
    unknown = set(mapping) - set(CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = TrainConfig(**mapping)
    if weight_kwargs:
        cfg = replace(cfg, weights=replace(cfg.weights, **weight_kwargs))
    if dataset_kwargs:
        cfg = replace(cfg, dataset=replace(cfg.dataset, **dataset_kwargs))
    return cfg


def load_config(path) -> TrainConfig:
    with open(os.fspath(path)) as fh:
        return config_from_mapping(parse_config_text(fh.read()))


def config_to_text(cfg: TrainConfig) -> str:
    """Flat key/value rendering; parses back to an equal config."""
    w, d = cfg.weights, cfg.dataset
    pairs = [
        ("variant", cfg.variant),
        ("iterations", cfg.iterations),
        ("batch_size", cfg.batch_size),
        ("critic_iters", cfg.critic_iters),
        ("learning_rate", repr(cfg.learning_rate)),
        ("clip", repr(cfg.clip)),
        ("seed", cfg.seed),
        ("checkpoint_interval", cfg.checkpoint_interval),
        ("theta_u", repr(w.theta_u)),
        ("theta_v", repr(w.theta_v)),
        ("alpha_u", repr(w.alpha_u)),
        ("alpha_v", repr(w.alpha_v)),
        ("beta_u", repr(w.beta_u)),
        ("beta_v", repr(w.beta_v)),
        ("tap_layer", w.tap_layer),
        ("dataset_task", d.task),
        ("dataset_size", d.size),
        ("noise_var", repr(d.noise_var)),
    ]
    return "".join(f"{k} = {v}\n" for k, v in pairs)


@dataclass
class LogRecord:
    iteration: int
    L_d: float | None
    L_g: float | None
    L_R: float | None
    L_Q: float | None
    ms: float


class TrainLog:
    """Event-ordered loss records: n critic rows per generator row."""

    CSV_HEADER = "iteration,L_d,L_g,L_R,L_Q,ms"

    def __init__(self, records=None):
        self.records: list = list(records) if records else []

    def append_critic(self, iteration: int, l_d: float, ms: float) -> None:
        self.records.append(LogRecord(iteration, l_d, None, None, None, ms))

    def append_generator(self, iteration, l_g, l_r, l_q, ms) -> None:
        self.records.append(LogRecord(iteration, None, l_g, l_r, l_q, ms))

    def critic_records(self):
        return [r for r in self.records if r.L_d is not None]

    def generator_records(self):
        return [r for r in self.records if r.L_d is None]

    def to_csv(self, path) -> None:
        def cell(v):
            return "" if v is None else repr(v)

        with open(os.fspath(path), "w") as fh:
            fh.write(self.CSV_HEADER + "\n")
            for r in self.records:
                fh.write(
                    f"{r.iteration},{cell(r.L_d)},{cell(r.L_g)},"
                    f"{cell(r.L_R)},{cell(r.L_Q)},{cell(r.ms)}\n"
                )

    @classmethod
    def from_csv(cls, path) -> "TrainLog":
        with open(os.fspath(path)) as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != cls.CSV_HEADER:
            raise ValueError(f"bad log header: {lines[0] if lines else '<empty>'!r}")
        records = []
        for line in lines[1:]:
            it, l_d, l_g, l_r, l_q, ms = line.split(",")
            records.append(
                LogRecord(
                    int(it),
                    None if l_d == "" else float(l_d),
                    None if l_g == "" else float(l_g),
                    None if l_r == "" else float(l_r),
                    None if l_q == "" else float(l_q),
                    float(ms),
                )
            )
        return cls(records)


def rmsprop_step(param, grad, state, lr, rho: float = RHO, eps: float = EPS):
    """One optimizer update.

    s <- rho*s + (1-rho)*g^2; theta <- theta - lr*g/(sqrt(s) + eps).

    Returns (new_param, new_state); inputs are not modified.
    """
    param = np.asarray(param)
    grad = np.asarray(grad)
    s = rho * np.asarray(state) + (1.0 - rho) * np.square(grad)
    return param - lr * grad / (np.sqrt(s) + eps), s


def clip_params(params: dict, c: float) -> dict:
    """Element-wise clamp of every tensor to [-c, c]. Idempotent."""
    if c <= 0:
        raise ValueError("clip bound must be > 0")
    return {
        k: Tensor(np.clip(t.data, -c, c), requires_grad=t.requires_grad)
        for k, t in params.items()
    }


def init_optimizer_state(model: CycleModel) -> dict:
    return {name: np.zeros_like(t.data) for name, t in model.named_parameters()}


def _apply_updates(part: dict, prefix: str, state: dict, lr: float) -> None:
    # rebinds each updated entry to a fresh tensor; grads live on the old ones
    for key in part:
        t = part[key]
        if t.grad is None:
            continue
        new_data, new_s = rmsprop_step(t.data, t.grad, state[f"{prefix}/{key}"], lr)
        state[f"{prefix}/{key}"] = new_s
        part[key] = Tensor(new_data.astype(t.data.dtype, copy=False), requires_grad=True)


def _zero_grads(model: CycleModel) -> None:
    for _, t in model.named_parameters():
        t.zero_grad()


def critic_step(model: CycleModel, batch, state: dict, lr: float) -> float:
    """One discriminator update from detached translations. Returns L_d."""
    u_arr, v_arr = batch
    dtype = model.d_u["d1.w"].dtype
    x_u = losses.batch_to_tensor(u_arr, dtype)
    x_v = losses.batch_to_tensor(v_arr, dtype)
    # translations computed outside the tape; the critic never reaches
    # back into generator parameters
    fake_v = Tensor(generator_forward(model.g_u, x_u, model.gen_cfg)[0].data)
    fake_u = Tensor(generator_forward(model.g_v, x_v, model.gen_cfg)[0].data)
    with Tape() as tape:
        loss = losses.adversarial_d(
            discriminator_forward(model.d_u, x_u, model.disc_cfg),
            discriminator_forward(model.d_u, fake_u, model.disc_cfg),
            discriminator_forward(model.d_v, x_v, model.disc_cfg),
            discriminator_forward(model.d_v, fake_v, model.disc_cfg),
        )
        value = float(loss.data)
        if np.isfinite(value):
            backward(tape, loss)
            _apply_updates(model.d_u, "d_u", state, lr)
            _apply_updates(model.d_v, "d_v", state, lr)
    _zero_grads(model)
    return value


def generator_step(
    model: CycleModel, batch, state: dict, lr: float, variant, weights, niqe_model=None
):
    """One generator update from the variant objective.

    Returns (L_g, L_R, L_Q) where absent terms read 0.0. Non-finite
    totals skip the update and leave parameters untouched.
    """
    with Tape() as tape:
        terms = losses.generator_terms(variant, batch, model, weights, niqe_model)
        total = losses._sum_terms(list(terms.values()))
        values = {k: float(v.data) for k, v in terms.items()}
        if np.isfinite(float(total.data)):
            backward(tape, total)
            _apply_updates(model.g_u, "g_u", state, lr)
            _apply_updates(model.g_v, "g_v", state, lr)
    _zero_grads(model)
    return (
        values.get("adversarial", 0.0),
        values.get("reconstruction", 0.0),
        values.get("quality", 0.0),
    )


def fit_toy_niqe(data: DomainData, patch_size: int = TOY_NIQE_PATCH) -> NiqeModel:
    """Naturalness model from both training halves; the only pristine
    corpus a synthetic task has."""
    planes = [as_gray(img) for img in data.train_u] + [as_gray(img) for img in data.train_v]
    return fit_niqe(planes, patch_size=patch_size)


@dataclass
class TrainResult:
    model: CycleModel
    log: TrainLog
    checkpoints: list


def train(
    config: TrainConfig,
    data: DomainData,
    checkpoint_dir=None,
    events: list | None = None,
    niqe_model: NiqeModel | None = None,
) -> TrainResult:
    """Run the full alternating loop.

    Args:
        config: validated hyperparameters.
        data: training halves to sample from.
        checkpoint_dir: when given, checkpoints land here at the
            configured interval and after the final iteration.
        events: when given, appended with one tag per algorithm line
            (sampling, loss, update, clip), for trace assertions.
        niqe_model: naturalness model for the qgan_niqe variant; fitted
            from the training halves when omitted.

    Raises:
        TrainingDiverged: on the first non-finite loss value.
    """
    rng = np.random.default_rng(config.seed)
    model = init_cycle_model(GeneratorConfig(), DiscriminatorConfig(), seed=config.seed)
    state = init_optimizer_state(model)
    log = TrainLog()
    checkpoints = []
    last_finite: dict = {}
    trace = events.append if events is not None else (lambda _tag: None)
    if config.variant == "qgan_niqe" and niqe_model is None:
        niqe_model = fit_toy_niqe(data)

    def sample(domain, phase):
        trace(f"sample_{domain}/{phase}")
        return data.sample(rng, config.batch_size, domain)

    if checkpoint_dir is not None:
        os.makedirs(os.fspath(checkpoint_dir), exist_ok=True)

    for it in range(1, config.iterations + 1):
        for _ in range(config.critic_iters):
            batch = (sample("u", "critic"), sample("v", "critic"))
            t0 = time.perf_counter()
            l_d = critic_step(model, batch, state, config.learning_rate)
            trace("loss/L_d")
            if not np.isfinite(l_d):
                raise TrainingDiverged(it, "L_d", last_finite)
            trace("update/discriminators")
            model.d_u = clip_params(model.d_u, config.clip)
            trace("clip/d_u")
            model.d_v = clip_params(model.d_v, config.clip)
            trace("clip/d_v")
            ms = (time.perf_counter() - t0) * 1000.0
            last_finite["L_d"] = l_d
            log.append_critic(it, l_d, ms)

        batch = (sample("u", "generator"), sample("v", "generator"))
        t0 = time.perf_counter()
        l_g, l_r, l_q = generator_step(
            model, batch, state, config.learning_rate, config.variant,
            config.weights, niqe_model,
        )
        trace("loss/L_g")
        for name, value in (("L_g", l_g), ("L_R", l_r), ("L_Q", l_q)):
            if not np.isfinite(value):
                raise TrainingDiverged(it, name, last_finite)
        trace("update/generators")
        ms = (time.perf_counter() - t0) * 1000.0
        last_finite.update({"L_g": l_g, "L_R": l_r, "L_Q": l_q})
        log.append_generator(it, l_g, l_r, l_q, ms)

        if checkpoint_dir is not None and (
            it % config.checkpoint_interval == 0 or it == config.iterations
        ):
            path = os.path.join(os.fspath(checkpoint_dir), f"ckpt_{it:06d}.npz")
            if not checkpoints or checkpoints[-1] != path:
                model.save(
                    path,
                    {"iteration": it, "variant": config.variant, "seed": config.seed},
                )
                checkpoints.append(path)

    return TrainResult(model=model, log=log, checkpoints=checkpoints)
