"""Training objectives.

Content loss compares two images through a fixed four-stage feature pyramid
phi: stage i is a stride-2 3x3 convolution plus SiLU applied to stage i-1's
output, and the loss sums the per-stage mean squared feature differences.
The pyramid's weights are seeded random by default (a cheap stand-in for a
pretrained perceptual net, adequate at desk scale) or loaded from a
checkpoint-format file; either way they are frozen and never updated.

Adversarial losses average per-patch logit maps over patches and scales.
Probabilities pass through a clamp to [eps, 1 - eps] before any log, so a
saturated discriminator yields large finite losses instead of infinities.

With M logit maps all sitting at probability one half, the discriminator
loss is 2 log 2 and the generator loss is -log 2 (saturating) or +log 2
(non-saturating); the identity tests pin these.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, Tensor, clip, conv2d, sigmoid, silu, tlog

CLAMP_EPS = 1e-7


@dataclass
class FeatureExtractor:
    stages: list  # [(w, b)] with w (3, 3, c_in, c_out), b (c_out,)
    seed: int
    channels: tuple

    @classmethod
    def create(cls, seed: int = 0, channels: tuple = (16, 32, 64, 64)) -> "FeatureExtractor":
        if len(channels) != 4:
            raise DimensionError(f"feature extractor: need 4 stage widths, got {channels}")
        rng = np.random.default_rng(seed)
        stages = []
        c_in = 3
        for c_out in channels:
            std = np.sqrt(2.0 / (9 * c_in + 9 * c_out))
            w = Tensor(rng.normal(0.0, std, size=(3, 3, c_in, c_out)))
            b = Tensor(np.zeros(c_out))
            stages.append((w, b))
            c_in = c_out
        return cls(stages=stages, seed=seed, channels=tuple(channels))

    def named(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(self.stages, start=1):
            out[f"stage{i}.w"] = w
            out[f"stage{i}.b"] = b
        return out

    def save(self, path) -> None:
        from .checkpoint import save_checkpoint

        save_checkpoint(self.named(), path)

    @classmethod
    def load(cls, path) -> "FeatureExtractor":
        """Pretrained stage weights from a checkpoint-format file."""
        from .checkpoint import CheckpointShapeError, load_checkpoint

        named = load_checkpoint(path)
        stages = []
        channels = []
        c_in = 3
        for i in range(1, 5):
            try:
                w, b = named[f"stage{i}.w"], named[f"stage{i}.b"]
            except KeyError as missing:
                raise CheckpointShapeError(f"{path}: tensor {missing} missing") from None
            if w.ndim != 4 or w.shape[:3] != (3, 3, c_in) or b.shape != (w.shape[3],):
                raise CheckpointShapeError(
                    f"{path}: stage{i} shapes {w.shape}/{b.shape} do not chain from {c_in} channels"
                )
            stages.append((Tensor(w), Tensor(b)))
            channels.append(w.shape[3])
            c_in = w.shape[3]
        return cls(stages=stages, seed=-1, channels=tuple(channels))

    def features(self, img: Tensor) -> list:
        if img.ndim != 3 or img.shape[2] != 3:
            raise DimensionError(f"feature extractor: expected an (H, W, 3) image, got {img.shape}")
        feats = []
        x = img
        for w, b in self.stages:
            x = silu(conv2d(x, w, b, stride=2))
            feats.append(x)
        return feats


def content_loss(i_c: Tensor, i_cs: Tensor, phi: FeatureExtractor) -> Tensor:
    """Sum over stages of mean((phi_i(i_c) - phi_i(i_cs))^2), i_c detached."""
    if i_c.shape != i_cs.shape:
        raise DimensionError(f"content_loss: image shapes differ: {i_c.shape} vs {i_cs.shape}")
    ref = phi.features(i_c.detach())
    out = phi.features(i_cs)
    total = None
    for a, b in zip(ref, out):
        term = ((a - b) ** 2).mean()
        total = term if total is None else total + term
    return total


def _clamped_prob(logits: Tensor) -> Tensor:
    return clip(sigmoid(logits), CLAMP_EPS, 1.0 - CLAMP_EPS)


def adv_loss_discriminator(real_maps: list, fake_maps: list) -> Tensor:
    """-(1/M) sum over scales of [mean log p(real) + mean log(1 - p(fake))]."""
    if len(real_maps) != len(fake_maps) or not real_maps:
        raise DimensionError(
            f"adv_loss_discriminator: got {len(real_maps)} real and {len(fake_maps)} fake maps"
        )
    m = len(real_maps)
    total = None
    for real, fake in zip(real_maps, fake_maps):
        term = tlog(_clamped_prob(real)).mean() + tlog(1.0 - _clamped_prob(fake)).mean()
        total = term if total is None else total + term
    return total * (-1.0 / m)


def adv_loss_generator(fake_maps: list, mode: str = "nonsaturating") -> Tensor:
    """Generator side of the multi-scale objective.

    ``saturating`` is (1/M) sum mean log(1 - p(fake)), the direct objective;
    ``nonsaturating`` is -(1/M) sum mean log p(fake), the better-conditioned
    default.
    """
    if not fake_maps:
        raise DimensionError("adv_loss_generator: no logit maps")
    if mode not in ("saturating", "nonsaturating"):
        raise ValueError(f"adv_loss_generator: unknown mode {mode!r}")
    m = len(fake_maps)
    total = None
    for fake in fake_maps:
        p = _clamped_prob(fake)
        term = tlog(1.0 - p).mean() if mode == "saturating" else tlog(p).mean()
        total = term if total is None else total + term
    sign = 1.0 if mode == "saturating" else -1.0
    return total * (sign / m)


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 1.0
    lambda_adv: float = 5.0


def total_loss(content: Tensor, adv_g: Tensor, weights: LossWeights = LossWeights()) -> Tensor:
    return content * weights.lambda_c + adv_g * weights.lambda_adv
