"""Style-transfer generator: embed, scan-based state-space blocks, spatial
reweighting attention, decode.

An input image in [-1, 1] is embedded at quarter resolution by two stride-2
convolutions. A stack of residual groups follows; each group chains a few
dual-branch blocks and adds the group input back on top. Inside a block,
each branch flattens the feature map along one of the two strip scan
orders, runs the state-space recurrence over that sequence, and restores
the 2-D layout; the two branch outputs are averaged. A single
channel-reweighted spatial attention sits after the last group, and a
nearest-neighbour upsampling decoder maps back to a 3-channel image through
tanh.

The attention computes a global channel descriptor G by average pooling,
reweights a 1x1-convolved copy R of the features by G, and forms an
hw x hw spatial map from the two flattened copies:

    A_sp = R' (G_1')^T / (hw * C),   G_1 = R * G   (channel broadcast)

The output is A_sp applied to the flattened input features. A row-softmax
normalization of A_sp is available behind a flag; the plain 1/(hw*C)
rescale is the default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scan import DualPath, ScanOrder, build_dual_path, deserialize, serialize
from .ssm import SSMParams, init_ssm_params, ssm_scan
from .tensor import (
    DimensionError,
    Tensor,
    conv1x1,
    conv2d,
    conv2d_depthwise,
    matmul,
    reshape,
    silu,
    softmax_rows,
    tanh,
    transpose,
    upsample_nearest,
    global_avg_pool,
)


@dataclass
class GeneratorConfig:
    channels: int = 8
    state_dim: int = 4
    num_groups: int = 1
    blocks_per_group: int = 2
    strip_size: int = 4
    alpha_init: float = 0.1
    selective: bool = False
    attention_softmax: bool = False

    @classmethod
    def desk(cls) -> "GeneratorConfig":
        return cls(channels=8, state_dim=4, num_groups=1, blocks_per_group=2)

    @classmethod
    def paper_scale(cls) -> "GeneratorConfig":
        return cls(channels=64, state_dim=16, num_groups=4, blocks_per_group=2)


@dataclass
class BranchWeights:
    """One scan branch: linear in, depthwise conv, SSM, linear out, local
    enhancement (identity plus a scaled depthwise refinement)."""

    lin_in_w: Tensor    # (C, C)
    lin_in_b: Tensor    # (C,)
    dw_kernels: Tensor  # (3, 3, C)
    ssm: SSMParams
    lin_out_w: Tensor   # (C, C)
    lin_out_b: Tensor   # (C,)
    loe_kernels: Tensor  # (3, 3, C)
    loe_scale: Tensor    # (C,)

    def named(self, prefix: str) -> dict:
        out = {
            prefix + "lin_in.w": self.lin_in_w,
            prefix + "lin_in.b": self.lin_in_b,
            prefix + "dw.k": self.dw_kernels,
            prefix + "lin_out.w": self.lin_out_w,
            prefix + "lin_out.b": self.lin_out_b,
            prefix + "loe.k": self.loe_kernels,
            prefix + "loe.scale": self.loe_scale,
        }
        out.update(self.ssm.named(prefix + "ssm."))
        return out


@dataclass
class BlockWeights:
    """Dual-branch scan block: horizontal-strip and vertical-strip branches,
    each wrapped in one alpha-scaled residual, outputs averaged."""

    branch_h: BranchWeights
    branch_v: BranchWeights
    alpha: Tensor  # scalar

    def named(self, prefix: str) -> dict:
        out = {prefix + "alpha": self.alpha}
        out.update(self.branch_h.named(prefix + "h."))
        out.update(self.branch_v.named(prefix + "v."))
        return out


@dataclass
class CRSAWeights:
    w: Tensor  # (C, C) for the 1x1 reweighting conv
    b: Tensor  # (C,)

    def named(self, prefix: str) -> dict:
        return {prefix + "w": self.w, prefix + "b": self.b}


@dataclass
class GeneratorWeights:
    config: GeneratorConfig
    embed_w1: Tensor  # (3, 3, 3, C)
    embed_b1: Tensor
    embed_w2: Tensor  # (3, 3, C, C)
    embed_b2: Tensor
    groups: list = field(default_factory=list)  # list[list[BlockWeights]]
    crsa: CRSAWeights | None = None
    dec_w1: Tensor | None = None  # (3, 3, C, C)
    dec_b1: Tensor | None = None
    dec_w2: Tensor | None = None  # (3, 3, C, C)
    dec_b2: Tensor | None = None
    out_w: Tensor | None = None   # (C, 3) 1x1 head
    out_b: Tensor | None = None

    def named(self) -> dict:
        out = {
            "embed.conv1.w": self.embed_w1,
            "embed.conv1.b": self.embed_b1,
            "embed.conv2.w": self.embed_w2,
            "embed.conv2.b": self.embed_b2,
        }
        for i, group in enumerate(self.groups):
            for j, block in enumerate(group):
                out.update(block.named(f"groups.{i}.{j}."))
        out.update(self.crsa.named("crsa."))
        out.update(
            {
                "decoder.conv1.w": self.dec_w1,
                "decoder.conv1.b": self.dec_b1,
                "decoder.conv2.w": self.dec_w2,
                "decoder.conv2.b": self.dec_b2,
                "decoder.out.w": self.out_w,
                "decoder.out.b": self.out_b,
            }
        )
        return out


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _init_branch(cfg: GeneratorConfig, rng: np.random.Generator) -> BranchWeights:
    c = cfg.channels
    return BranchWeights(
        lin_in_w=_glorot(rng, (c, c), c, c),
        lin_in_b=_zeros(c),
        dw_kernels=Tensor(rng.normal(0.0, 0.2, size=(3, 3, c)), requires_grad=True),
        ssm=init_ssm_params(cfg.state_dim, c, rng, selective=cfg.selective),
        lin_out_w=_glorot(rng, (c, c), c, c),
        lin_out_b=_zeros(c),
        loe_kernels=Tensor(rng.normal(0.0, 0.2, size=(3, 3, c)), requires_grad=True),
        loe_scale=Tensor(rng.normal(0.1, 0.02, size=c), requires_grad=True),
    )


def init_generator_weights(cfg: GeneratorConfig, rng: np.random.Generator) -> GeneratorWeights:
    c = cfg.channels
    gw = GeneratorWeights(
        config=cfg,
        embed_w1=_glorot(rng, (3, 3, 3, c), 27, 9 * c),
        embed_b1=_zeros(c),
        embed_w2=_glorot(rng, (3, 3, c, c), 9 * c, 9 * c),
        embed_b2=_zeros(c),
    )
    for _ in range(cfg.num_groups):
        group = []
        for _ in range(cfg.blocks_per_group):
            group.append(
                BlockWeights(
                    branch_h=_init_branch(cfg, rng),
                    branch_v=_init_branch(cfg, rng),
                    alpha=Tensor(np.asarray(cfg.alpha_init), requires_grad=True),
                )
            )
        gw.groups.append(group)
    gw.crsa = CRSAWeights(w=_glorot(rng, (c, c), c, c), b=_zeros(c))
    gw.dec_w1 = _glorot(rng, (3, 3, c, c), 9 * c, 9 * c)
    gw.dec_b1 = _zeros(c)
    gw.dec_w2 = _glorot(rng, (3, 3, c, c), 9 * c, 9 * c)
    gw.dec_b2 = _zeros(c)
    gw.out_w = _glorot(rng, (c, 3), c, 3)
    gw.out_b = _zeros(3)
    return gw


# --- forward pieces -------------------------------------------------------


def patch_embed(img: Tensor, gw: GeneratorWeights) -> Tensor:
    """Image (H, W, 3) -> features (H/4, W/4, C); extents must divide by 4."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"patch_embed: expected an (H, W, 3) image, got {img.shape}")
    if img.shape[0] % 4 or img.shape[1] % 4:
        raise DimensionError(
            f"patch_embed: extents {img.shape[0]}x{img.shape[1]} must divide by 4; pad first"
        )
    x = silu(conv2d(img, gw.embed_w1, gw.embed_b1, stride=2))
    return conv2d(x, gw.embed_w2, gw.embed_b2, stride=2)


def loe(x: Tensor, kernels: Tensor, scale: Tensor) -> Tensor:
    """Local enhancement: identity plus per-channel-scaled depthwise conv."""
    return x + scale * conv2d_depthwise(x, kernels)


def _branch_pipeline(f: Tensor, bw: BranchWeights, path: ScanOrder) -> Tensor:
    x = conv1x1(f, bw.lin_in_w, bw.lin_in_b)
    x = silu(conv2d_depthwise(x, bw.dw_kernels))
    seq = serialize(x, path)
    seq = ssm_scan(seq, bw.ssm)
    x = deserialize(seq, path)
    x = conv1x1(x, bw.lin_out_w, bw.lin_out_b)
    return loe(x, bw.loe_kernels, bw.loe_scale)


def block_forward(f: Tensor, block: BlockWeights, paths: DualPath) -> Tensor:
    branch_h = f + block.alpha * _branch_pipeline(f, block.branch_h, paths.horizontal)
    branch_v = f + block.alpha * _branch_pipeline(f, block.branch_v, paths.vertical)
    return (branch_h + branch_v) * 0.5


def group_forward(f: Tensor, group: list, paths: DualPath) -> Tensor:
    g = f
    for block in group:
        g = block_forward(g, block, paths)
    return f + g


def crsa_forward(
    fhat: Tensor,
    weights: CRSAWeights,
    softmax_attention: bool = False,
    return_attention: bool = False,
):
    """Channel-reweighted spatial attention over an (h, w, C) map."""
    if fhat.ndim != 3:
        raise DimensionError(f"crsa_forward: expected (h, w, C), got {fhat.shape}")
    h, w, c = fhat.shape
    hw = h * w
    g = global_avg_pool(fhat)                 # (1, 1, C)
    r = conv1x1(fhat, weights.w, weights.b)   # (h, w, C)
    g1 = r * g                                # channel broadcast
    r_flat = reshape(r, (hw, c))
    g1_flat = reshape(g1, (hw, c))
    f_flat = reshape(fhat, (hw, c))
    a_sp = matmul(r_flat, transpose(g1_flat))
    a_sp = softmax_rows(a_sp) if softmax_attention else a_sp * (1.0 / (hw * c))
    out = reshape(matmul(a_sp, f_flat), (h, w, c))
    if return_attention:
        return out, a_sp
    return out


def decode(f: Tensor, gw: GeneratorWeights) -> Tensor:
    """Features (h, w, C) -> image (4h, 4w, 3) in [-1, 1]."""
    x = silu(conv2d(upsample_nearest(f, 2), gw.dec_w1, gw.dec_b1))
    x = silu(conv2d(upsample_nearest(x, 2), gw.dec_w2, gw.dec_b2))
    return tanh(conv1x1(x, gw.out_w, gw.out_b))


def build_paths(gw: GeneratorWeights, feat_h: int, feat_w: int) -> DualPath:
    # Tiny inputs can leave fewer feature rows/cols than the configured
    # strip, so the effective strip is clamped to the feature extents.
    s = min(gw.config.strip_size, feat_h, feat_w)
    return build_dual_path(feat_h, feat_w, s)


def generator_forward(img: Tensor, gw: GeneratorWeights, paths: DualPath | None = None) -> Tensor:
    f = patch_embed(img, gw)
    if paths is None:
        paths = build_paths(gw, f.shape[0], f.shape[1])
    for group in gw.groups:
        f = group_forward(f, group, paths)
    f = crsa_forward(f, gw.crsa, softmax_attention=gw.config.attention_softmax)
    return decode(f, gw)


# --- checkpoint plumbing --------------------------------------------------

_META_FIELDS = ("channels", "state_dim", "num_groups", "blocks_per_group", "strip_size", "selective")


def generator_meta(cfg: GeneratorConfig) -> dict:
    vals = {
        "channels": cfg.channels,
        "state_dim": cfg.state_dim,
        "num_groups": cfg.num_groups,
        "blocks_per_group": cfg.blocks_per_group,
        "strip_size": cfg.strip_size,
        "selective": int(cfg.selective),
    }
    return {f"meta.gen.{k}": np.asarray(float(v)) for k, v in vals.items()}


def config_from_meta(named: dict) -> GeneratorConfig:
    try:
        vals = {k: int(round(float(named[f"meta.gen.{k}"]))) for k in _META_FIELDS}
    except KeyError as missing:
        raise DimensionError(f"generator metadata entry {missing} not found") from None
    return GeneratorConfig(
        channels=vals["channels"],
        state_dim=vals["state_dim"],
        num_groups=vals["num_groups"],
        blocks_per_group=vals["blocks_per_group"],
        strip_size=vals["strip_size"],
        selective=bool(vals["selective"]),
    )


def weights_from_named(cfg: GeneratorConfig, lookup) -> GeneratorWeights:
    """Rebuild GeneratorWeights for ``cfg`` from stored arrays.

    ``lookup(name, expected_shape)`` fetches one array and is the place
    where shape validation (and its error type) is decided by the caller.
    """
    template = init_generator_weights(cfg, np.random.default_rng(0))
    for name, tensor in template.named().items():
        tensor.data = lookup(name, tensor.data.shape)
    return template
