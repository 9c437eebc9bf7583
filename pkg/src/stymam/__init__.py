"""Desk-scale strip-scan state-space style transfer."""

from .tensor import (
    ConfigurationError,
    DimensionError,
    Tensor,
    backward,
    finite_diff_check,
    topo_order,
    zero_grads,
)
from .scan import DualPath, Orientation, ScanOrder, build_dual_path, build_strip_zigzag, deserialize, serialize
from .ssm import SSMParams, init_ssm_params, selective_params, ssm_scan, ssm_scan_naive, ssm_state_trajectory
from .generator import (
    BlockWeights,
    BranchWeights,
    CRSAWeights,
    GeneratorConfig,
    GeneratorWeights,
    block_forward,
    crsa_forward,
    decode,
    generator_forward,
    group_forward,
    init_generator_weights,
    loe,
    patch_embed,
)
from .discriminator import (
    DiscriminatorConfig,
    DiscriminatorWeights,
    disc_forward,
    downsample_avg,
    init_discriminator_weights,
)
from .losses import (
    FeatureExtractor,
    LossWeights,
    adv_loss_discriminator,
    adv_loss_generator,
    content_loss,
    total_loss,
)
from .checkpoint import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    Adam,
    DatasetError,
    TrainAbort,
    TrainConfig,
    adam_update,
    init_train_state,
    load_config,
    load_generator,
    parse_config,
    train,
    train_step,
)

__version__ = "0.1.0"
