"""Alternating adversarial training at desk scale.

One step is one discriminator update followed by one generator update on
the same drawn batch. The discriminator sees style images as real and the
generator's current output (detached, so its gradients stop at the image)
as fake; the generator then minimizes content plus weighted adversarial
loss through a fresh discriminator pass. The two updates touch disjoint
parameter sets by construction.

Everything random flows from one seeded generator: weight init, batch
draws, nothing else. Two runs with the same config and seed produce
identical metric streams and identical checkpoints.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .checkpoint import (
    CheckpointShapeError,
    load_checkpoint,
    save_checkpoint,
    shape_checked_lookup,
)
from .discriminator import DiscriminatorConfig, DiscriminatorWeights, disc_forward, init_discriminator_weights
from .generator import (
    GeneratorConfig,
    GeneratorWeights,
    build_paths,
    config_from_meta,
    generator_forward,
    generator_meta,
    init_generator_weights,
    weights_from_named,
)
from .imageio import ImageFormatError, img_to_float, read_image, resize_nearest
from .losses import FeatureExtractor, LossWeights, adv_loss_generator, adv_loss_discriminator, content_loss
from .scan import DualPath
from .tensor import ConfigurationError, Tensor, backward, zero_grads


class DatasetError(ValueError):
    """An image directory is missing, empty, or unreadable."""


class TrainAbort(RuntimeError):
    """Training hit a non-finite value; the message names the first tensor."""


# --- configuration --------------------------------------------------------

_PROFILES = ("desk", "paper")


@dataclass
class TrainConfig:
    content_dir: str = ""
    style_dir: str = ""
    out_dir: str = "."
    profile: str = "desk"
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1
    max_steps: int = 500
    seed: int = 0
    image_size: int = 0          # 0 means the profile default
    lambda_c: float = 1.0
    lambda_adv: float = 5.0
    adv_mode: str = "nonsaturating"
    checkpoint_every: int = 0    # 0 means final checkpoint only
    feature_seed: int = 0
    channels: int = 0            # 0 means the profile default, likewise below
    state_dim: int = 0
    num_groups: int = 0
    blocks_per_group: int = 0
    strip_size: int = 0
    disc_scales: int = 0
    selective: int = 0

    def resolved_image_size(self) -> int:
        if self.image_size:
            return self.image_size
        return 32 if self.profile == "desk" else 256

    def generator_config(self) -> GeneratorConfig:
        base = GeneratorConfig.desk() if self.profile == "desk" else GeneratorConfig.paper_scale()
        if self.channels:
            base.channels = self.channels
        if self.state_dim:
            base.state_dim = self.state_dim
        if self.num_groups:
            base.num_groups = self.num_groups
        if self.blocks_per_group:
            base.blocks_per_group = self.blocks_per_group
        if self.strip_size:
            base.strip_size = self.strip_size
        base.selective = bool(self.selective)
        return base

    def discriminator_config(self) -> DiscriminatorConfig:
        base = DiscriminatorConfig.desk() if self.profile == "desk" else DiscriminatorConfig.paper_scale()
        if self.disc_scales:
            base.num_scales = self.disc_scales
        return base

    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda_c=self.lambda_c, lambda_adv=self.lambda_adv)


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    """Flat key=value lines, utf-8, # comments; unknown keys are errors."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    cfg = TrainConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
        current = getattr(cfg, key)
        try:
            if isinstance(current, int):
                setattr(cfg, key, int(value))
            elif isinstance(current, float):
                setattr(cfg, key, float(value))
            else:
                setattr(cfg, key, value)
        except ValueError:
            raise ConfigurationError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
    if cfg.profile not in _PROFILES:
        raise ConfigurationError(f"{source}: profile must be one of {_PROFILES}, got {cfg.profile!r}")
    if cfg.adv_mode not in ("saturating", "nonsaturating"):
        raise ConfigurationError(f"{source}: bad adv_mode {cfg.adv_mode!r}")
    return cfg


def load_config(path) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from None
    return parse_config(text, source=str(path))


# --- optimizer ------------------------------------------------------------


def adam_update(value, grad, m, v, t, lr, beta1=0.5, beta2=0.999, eps=1e-8):
    """One bias-corrected moment update; pure arrays in, new arrays out."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Tracks moments per named tensor and applies ``adam_update``."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            p.data, self.m[name], self.v[name] = adam_update(
                p.data, p.grad, self.m[name], self.v[name], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )

    def zero_grads(self) -> None:
        zero_grads(self.params.values())


# --- data -----------------------------------------------------------------

_IMAGE_EXTS = (".ppm", ".png", ".jpg", ".jpeg")


def load_image_dir(path, size: int) -> list:
    """Every readable image under ``path``, resized to size x size, in [-1, 1]."""
    if not os.path.isdir(path):
        raise DatasetError(f"image directory {path} does not exist")
    names = sorted(n for n in os.listdir(path) if n.lower().endswith(_IMAGE_EXTS))
    images = []
    for name in names:
        try:
            img = read_image(os.path.join(path, name))
        except ImageFormatError as err:
            raise DatasetError(str(err)) from None
        if img.shape[0] != size or img.shape[1] != size:
            img = resize_nearest(img, size, size)
        images.append(img_to_float(img))
    if not images:
        raise DatasetError(f"image directory {path} has no readable images")
    return images


# --- training state -------------------------------------------------------


@dataclass
class TrainState:
    cfg: TrainConfig
    gen: GeneratorWeights
    disc: DiscriminatorWeights | None
    phi: FeatureExtractor
    paths: DualPath
    opt_g: Adam
    opt_d: Adam | None
    rng: np.random.Generator
    content: list
    styles: list
    step: int = 0
    adversarial: bool = True
    batch: list = field(default_factory=list)


def init_train_state(cfg: TrainConfig) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    size = cfg.resolved_image_size()
    if size % 4:
        raise ConfigurationError(f"image_size {size} must divide by 4")

    gen_cfg = cfg.generator_config()
    gen = init_generator_weights(gen_cfg, rng)
    adversarial = cfg.lambda_adv != 0.0
    disc = init_discriminator_weights(cfg.discriminator_config(), rng) if adversarial else None

    content = load_image_dir(cfg.content_dir, size)
    styles = load_image_dir(cfg.style_dir, size) if adversarial else []
    if adversarial and not styles:
        raise DatasetError("adversarial training needs style images")

    paths = build_paths(gen, size // 4, size // 4)
    opt_g = Adam(gen.named(), cfg.lr_g, cfg.beta1, cfg.beta2, cfg.eps)
    opt_d = Adam(disc.named(), cfg.lr_d, cfg.beta1, cfg.beta2, cfg.eps) if adversarial else None
    return TrainState(
        cfg=cfg,
        gen=gen,
        disc=disc,
        phi=FeatureExtractor.create(seed=cfg.feature_seed),
        paths=paths,
        opt_g=opt_g,
        opt_d=opt_d,
        rng=rng,
        content=content,
        styles=styles,
        adversarial=adversarial,
    )


def _draw_batch(state: TrainState) -> None:
    n = state.cfg.batch_size
    content_idx = state.rng.integers(0, len(state.content), size=n)
    if state.adversarial:
        style_idx = state.rng.integers(0, len(state.styles), size=n)
        state.batch = [(state.content[i], state.styles[j]) for i, j in zip(content_idx, style_idx)]
    else:
        state.batch = [(state.content[i], None) for i in content_idx]


def _mean_losses(losses: list) -> Tensor:
    total = losses[0]
    for term in losses[1:]:
        total = total + term
    return total * (1.0 / len(losses))


def discriminator_step(state: TrainState) -> float:
    """One update on style-vs-generated; generated images are detached."""
    terms = []
    for content_arr, style_arr in state.batch:
        fake = generator_forward(Tensor(content_arr), state.gen, state.paths).detach()
        real_maps = disc_forward(Tensor(style_arr), state.disc)
        fake_maps = disc_forward(fake, state.disc)
        terms.append(adv_loss_discriminator(real_maps, fake_maps))
    loss = _mean_losses(terms)
    state.opt_d.zero_grads()
    backward(loss)
    state.opt_d.step()
    state.opt_d.zero_grads()
    return loss.item()


def generator_step(state: TrainState) -> tuple:
    """One update on content plus weighted adversarial loss."""
    weights = state.cfg.loss_weights()
    c_terms, g_terms = [], []
    for content_arr, _ in state.batch:
        content_img = Tensor(content_arr)
        fake = generator_forward(content_img, state.gen, state.paths)
        c_terms.append(content_loss(content_img, fake, state.phi))
        if state.adversarial:
            g_terms.append(adv_loss_generator(disc_forward(fake, state.disc), state.cfg.adv_mode))
    loss_c = _mean_losses(c_terms)
    if state.adversarial:
        loss_g = _mean_losses(g_terms)
        loss_total = loss_c * weights.lambda_c + loss_g * weights.lambda_adv
    else:
        loss_g = None
        loss_total = loss_c * weights.lambda_c
    state.opt_g.zero_grads()
    backward(loss_total)
    state.opt_g.step()
    state.opt_g.zero_grads()
    return (loss_g.item() if loss_g is not None else 0.0, loss_c.item(), loss_total.item())


def _check_finite(state: TrainState, metrics: dict) -> None:
    for name, value in metrics.items():
        if name != "step" and not np.isfinite(value):
            raise TrainAbort(f"step {state.step}: {name} is not finite")
    for name, tensor in state.gen.named().items():
        if not np.isfinite(tensor.data).all():
            raise TrainAbort(f"step {state.step}: generator tensor {name} is not finite")
    if state.disc is not None:
        for name, tensor in state.disc.named().items():
            if not np.isfinite(tensor.data).all():
                raise TrainAbort(f"step {state.step}: discriminator tensor {name} is not finite")


def train_step(state: TrainState) -> dict:
    state.step += 1
    _draw_batch(state)
    loss_d = discriminator_step(state) if state.adversarial else 0.0
    loss_g, loss_c, loss_total = generator_step(state)
    metrics = {
        "step": state.step,
        "loss_d": loss_d,
        "loss_g": loss_g,
        "loss_c": loss_c,
        "loss_total": loss_total,
    }
    _check_finite(state, metrics)
    return metrics


METRIC_COLUMNS = ("step", "loss_d", "loss_g", "loss_c", "loss_total")


def training_checkpoint_named(state: TrainState) -> dict:
    named = dict(generator_meta(state.gen.config))
    named["meta.step"] = np.asarray(float(state.step))
    for k, v in state.gen.named().items():
        named["gen." + k] = v
    if state.disc is not None:
        named["meta.disc.num_scales"] = np.asarray(float(state.disc.config.num_scales))
        for k, v in state.disc.named().items():
            named["disc." + k] = v
    return named


def load_generator(path, config: GeneratorConfig | None = None) -> GeneratorWeights:
    """Generator weights from a training checkpoint.

    With ``config`` given, every stored shape must match it; otherwise the
    architecture is taken from the checkpoint's metadata entries.
    """
    named = load_checkpoint(path)
    if config is None:
        try:
            config = config_from_meta(named)
        except Exception:
            raise CheckpointShapeError(f"{path}: generator metadata missing") from None
    lookup = shape_checked_lookup(named, str(path))
    gw = weights_from_named(config, lambda name, shape: lookup("gen." + name, shape))
    gw.config = config
    return gw


def train(cfg: TrainConfig, on_step=None) -> TrainState:
    """Run ``cfg.max_steps`` steps, streaming metrics.csv and checkpoints
    into ``cfg.out_dir``."""
    state = init_train_state(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_COLUMNS)
        f.flush()
        for _ in range(cfg.max_steps):
            metrics = train_step(state)
            writer.writerow([metrics[k] for k in METRIC_COLUMNS])
            f.flush()
            if on_step is not None:
                on_step(metrics)
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_checkpoint(
                    training_checkpoint_named(state),
                    os.path.join(cfg.out_dir, f"ckpt_step{state.step}.stymam"),
                )
    save_checkpoint(training_checkpoint_named(state), os.path.join(cfg.out_dir, "ckpt_final.stymam"))
    return state
