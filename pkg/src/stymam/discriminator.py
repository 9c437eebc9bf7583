"""Multi-scale patch discriminator.

Each scale judges the image at half the previous resolution: scale m sees
the input average-pooled by 2^(m-1). A scale is a norm-free stack of three
stride-2 convolutions (3 -> c1 -> c2 -> 1) with leaky ReLU between, ending
in a map of per-patch logits; no activation on the output. Per-patch logits
are left as maps here and averaged inside the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ConfigurationError, DimensionError, Tensor, avg_pool, conv2d, leaky_relu, pad_edge2d

MIN_INPUT_EXTENT = 16


@dataclass
class DiscriminatorConfig:
    num_scales: int = 3
    channels: tuple = (64, 128)
    leak: float = 0.2

    @classmethod
    def desk(cls) -> "DiscriminatorConfig":
        return cls(num_scales=2)

    @classmethod
    def paper_scale(cls) -> "DiscriminatorConfig":
        return cls(num_scales=3)


@dataclass
class ScaleWeights:
    w1: Tensor  # (3, 3, 3, c1)
    b1: Tensor
    w2: Tensor  # (3, 3, c1, c2)
    b2: Tensor
    w3: Tensor  # (3, 3, c2, 1)
    b3: Tensor

    def named(self, prefix: str) -> dict:
        return {
            prefix + "conv1.w": self.w1,
            prefix + "conv1.b": self.b1,
            prefix + "conv2.w": self.w2,
            prefix + "conv2.b": self.b2,
            prefix + "conv3.w": self.w3,
            prefix + "conv3.b": self.b3,
        }


@dataclass
class DiscriminatorWeights:
    config: DiscriminatorConfig
    scales: list = field(default_factory=list)

    def named(self) -> dict:
        out = {}
        for m, sw in enumerate(self.scales):
            out.update(sw.named(f"scales.{m}."))
        return out


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def init_discriminator_weights(
    cfg: DiscriminatorConfig, rng: np.random.Generator
) -> DiscriminatorWeights:
    if cfg.num_scales < 1:
        raise ConfigurationError(f"discriminator: need at least one scale, got {cfg.num_scales}")
    c1, c2 = cfg.channels
    dw = DiscriminatorWeights(config=cfg)
    for _ in range(cfg.num_scales):
        dw.scales.append(
            ScaleWeights(
                w1=_glorot(rng, (3, 3, 3, c1), 27, 9 * c1),
                b1=Tensor(np.zeros(c1), requires_grad=True),
                w2=_glorot(rng, (3, 3, c1, c2), 9 * c1, 9 * c2),
                b2=Tensor(np.zeros(c2), requires_grad=True),
                w3=_glorot(rng, (3, 3, c2, 1), 9 * c2, 9),
                b3=Tensor(np.zeros(1), requires_grad=True),
            )
        )
    return dw


def downsample_avg(img: Tensor, factor: int) -> Tensor:
    """Average-pool an image by a power-of-two factor, edge-padding first if
    the extents do not divide."""
    if factor < 1 or factor & (factor - 1):
        raise ConfigurationError(f"downsample_avg: factor must be a power of two, got {factor}")
    if factor == 1:
        return img
    h, w = img.shape[0], img.shape[1]
    pb = (-h) % factor
    pr = (-w) % factor
    if pb or pr:
        img = pad_edge2d(img, pb, pr)
    return avg_pool(img, factor)


def _scale_forward(x: Tensor, sw: ScaleWeights, leak: float) -> Tensor:
    x = leaky_relu(conv2d(x, sw.w1, sw.b1, stride=2), leak)
    x = leaky_relu(conv2d(x, sw.w2, sw.b2, stride=2), leak)
    return conv2d(x, sw.w3, sw.b3, stride=2)


def disc_forward(img: Tensor, dw: DiscriminatorWeights) -> list:
    """Logit maps for every scale, coarsest input last."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"disc_forward: expected an (H, W, 3) image, got {img.shape}")
    maps = []
    for m, sw in enumerate(dw.scales):
        x = downsample_avg(img, 2**m)
        if x.shape[0] < MIN_INPUT_EXTENT or x.shape[1] < MIN_INPUT_EXTENT:
            raise ConfigurationError(
                f"disc_forward: scale {m + 1} input {x.shape[0]}x{x.shape[1]} below the "
                f"{MIN_INPUT_EXTENT}x{MIN_INPUT_EXTENT} receptive minimum"
            )
        maps.append(_scale_forward(x, sw, dw.config.leak))
    return maps
