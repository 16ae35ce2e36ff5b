"""Rain-by-snow image restoration: model, losses, data synthesis, metrics and tooling."""

from .blocks import CFFN, TCB, ChannelLayerNorm, ConvAttention, channel_layer_norm
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    ManifestError,
    NonFiniteError,
    RSFormerError,
    TrainingError,
)
from .losses import LossConfig, charbonnier, dft2, focal_frequency, total_loss
from .metrics import MetricsReport, psnr, ssim
from .network import ModelConfig, RSFormer, build_model, desk_config, full_scale_config, infer
from .profiling import OpCountReport, attention_cost_table, count_matmul_chain, count_model_flops, time_inference
from .sampling import GLAD, GLAU, spatial_self_attention, transposed_self_attention
from .training import TrainConfig, cosine_lr, evaluate, preflight, train

__version__ = "0.1.0"
