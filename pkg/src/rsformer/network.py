"""U-shaped restoration network assembled from TCB stages and samplers."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Mapping

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import LAYER_SCALE_INIT, TCB
from .checks import check_feature_map
from .errors import ConfigError, ContractError
from .sampling import ATTENTION_CORES, ATTENTION_MODES, SAMPLING_MODES, make_downsampler, make_upsampler

TOKEN_MIXERS = ("cam", "tsa", "identity")
SKIP_FUSIONS = ("concat_project", "add")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``blocks_per_stage`` lists encoder stages (shallow to deep), the
    bottleneck, then decoder stages (deep to shallow): ``2 * levels - 1``
    entries.  Level ``l`` runs at width ``base_width * 2**l``.
    """

    base_width: int = 48
    levels: int = 4
    blocks_per_stage: tuple = (4, 6, 7, 10, 7, 6, 4)
    attention_kernel: int = 7
    ffn_expansion: float = 4.0
    sampling_mode: str = "glasm"
    attention_sampling_core: str = "transposed"
    attention_mode: str = "softmax"
    token_mixer: str = "cam"
    skip_fusion: str = "concat_project"
    global_residual: bool = True
    layer_scale_init: float = LAYER_SCALE_INIT

    def __post_init__(self):
        self.blocks_per_stage = tuple(self.blocks_per_stage)
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.base_width, int) and self.base_width >= 1, f"base_width must be a positive integer, got {self.base_width!r}")
        need(isinstance(self.levels, int) and self.levels >= 2, f"levels must be an integer >= 2, got {self.levels!r}")
        need(
            len(self.blocks_per_stage) == 2 * self.levels - 1,
            f"blocks_per_stage needs {2 * self.levels - 1} entries for levels={self.levels}, got {len(self.blocks_per_stage)}",
        )
        need(
            all(isinstance(b, int) and b >= 1 for b in self.blocks_per_stage),
            f"every blocks_per_stage entry must be an integer >= 1, got {list(self.blocks_per_stage)}",
        )
        need(
            isinstance(self.attention_kernel, int) and self.attention_kernel >= 1 and self.attention_kernel % 2 == 1,
            f"attention_kernel must be a positive odd integer, got {self.attention_kernel!r}",
        )
        need(self.ffn_expansion > 0, f"ffn_expansion must be positive, got {self.ffn_expansion!r}")
        need(round(self.ffn_expansion * self.base_width) >= 1, "ffn hidden width rounds to zero")
        need(self.sampling_mode in SAMPLING_MODES, f"sampling_mode must be one of {SAMPLING_MODES}, got {self.sampling_mode!r}")
        need(
            self.attention_sampling_core in ATTENTION_CORES,
            f"attention_sampling_core must be one of {ATTENTION_CORES}, got {self.attention_sampling_core!r}",
        )
        need(self.attention_mode in ATTENTION_MODES, f"attention_mode must be one of {ATTENTION_MODES}, got {self.attention_mode!r}")
        need(self.token_mixer in TOKEN_MIXERS, f"token_mixer must be one of {TOKEN_MIXERS}, got {self.token_mixer!r}")
        need(self.skip_fusion in SKIP_FUSIONS, f"skip_fusion must be one of {SKIP_FUSIONS}, got {self.skip_fusion!r}")
        need(isinstance(self.global_residual, bool), "global_residual must be a boolean")

    @property
    def widths(self):
        return [self.base_width * 2**level for level in range(self.levels)]

    @property
    def multiple(self):
        """Spatial sizes must be divisible by this for :meth:`RSFormer.forward`."""
        return 2 ** (self.levels - 1)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config field(s): {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes):
        return type(self).from_dict({**self.to_dict(), **changes})


def full_scale_config():
    """Best-effort full-size configuration (about 25.9 M parameters).

    Widths and depths were chosen to land near a 25.7 M parameter target;
    they are not known to match any particular trained model.
    """
    return ModelConfig()


def desk_config(**changes):
    """Small two-level model for CPU experiments and tests."""
    base = dict(base_width=8, levels=2, blocks_per_stage=(1, 1, 1))
    base.update(changes)
    return ModelConfig(**base)


class RSFormer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        widths = config.widths
        levels = config.levels
        blocks = config.blocks_per_stage

        def stage(width, depth):
            return nn.Sequential(
                *[
                    TCB(
                        width,
                        config.attention_kernel,
                        config.ffn_expansion,
                        config.layer_scale_init,
                        config.token_mixer,
                    )
                    for _ in range(depth)
                ]
            )

        self.stem = nn.Conv2d(3, widths[0], 3, padding=1)
        self.encoders = nn.ModuleList([stage(widths[l], blocks[l]) for l in range(levels - 1)])
        self.downs = nn.ModuleList(
            [
                make_downsampler(config.sampling_mode, widths[l], config.attention_sampling_core, config.attention_mode)
                for l in range(levels - 1)
            ]
        )
        self.bottleneck = stage(widths[-1], blocks[levels - 1])
        # decoder modules are stored deep-to-shallow, i.e. in execution order
        decoder_levels = list(range(levels - 2, -1, -1))
        self.ups = nn.ModuleList(
            [
                make_upsampler(config.sampling_mode, widths[l + 1], config.attention_sampling_core, config.attention_mode)
                for l in decoder_levels
            ]
        )
        if config.skip_fusion == "concat_project":
            self.fusions = nn.ModuleList([nn.Conv2d(2 * widths[l], widths[l], 1) for l in decoder_levels])
        else:
            self.fusions = None
        self.decoders = nn.ModuleList(
            [stage(widths[l], blocks[levels + i]) for i, l in enumerate(decoder_levels)]
        )
        self.head = nn.Conv2d(widths[0], 3, 3, padding=1)

    def forward(self, x):
        check_feature_map(x, "RSFormer")
        if x.shape[1] != 3:
            raise ContractError(f"RSFormer expects 3 input channels, got {x.shape[1]}")
        m = self.config.multiple
        if x.shape[2] % m or x.shape[3] % m:
            raise ContractError(
                f"height and width must be divisible by {m}, got {tuple(x.shape[2:])}; use infer() for arbitrary sizes"
            )
        feat = self.stem(x)
        skips = []
        for encoder, down in zip(self.encoders, self.downs):
            feat = encoder(feat)
            skips.append(feat)
            feat = down(feat)
        feat = self.bottleneck(feat)
        for i, (up, decoder) in enumerate(zip(self.ups, self.decoders)):
            feat = up(feat)
            skip = skips.pop()
            if self.fusions is not None:
                feat = self.fusions[i](torch.cat([feat, skip], dim=1))
            else:
                feat = feat + skip
            feat = decoder(feat)
        out = self.head(feat)
        if self.config.global_residual:
            out = x + out
        return out


def build_model(config: ModelConfig, seed: int = 0, dtype=torch.float32) -> RSFormer:
    """Construct a model with parameters drawn deterministically from ``seed``."""
    if not isinstance(config, ModelConfig):
        raise ConfigError(f"expected a ModelConfig, got {type(config).__name__}")
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = RSFormer(config)
    return model.to(dtype)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


@dataclass(frozen=True)
class PadRecord:
    height: int
    width: int
    pad_bottom: int
    pad_right: int


def pad_to_multiple(x, m):
    """Reflect-pad the bottom and right edges up to the next multiple of ``m``.

    Falls back to edge replication on axes too short to reflect.
    """
    if m < 1:
        raise ContractError(f"pad multiple must be >= 1, got {m}")
    if x.dim() != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ContractError(f"pad_to_multiple needs an (N, C, H, W) tensor with H, W >= 1, got {tuple(x.shape)}")
    h, w = x.shape[2:]
    pad_h = -h % m
    pad_w = -w % m
    record = PadRecord(h, w, pad_h, pad_w)
    if pad_h:
        x = F.pad(x, (0, 0, 0, pad_h), mode="reflect" if pad_h < h else "replicate")
    if pad_w:
        x = F.pad(x, (0, pad_w, 0, 0), mode="reflect" if pad_w < w else "replicate")
    return x, record


def unpad(x, record: PadRecord):
    return x[..., : record.height, : record.width]


@torch.no_grad()
def infer(model: RSFormer, image):
    """Restore an image of any size: pad, forward, crop, clamp to [0, 1]."""
    m = model.config.multiple
    if image.shape[2] < m or image.shape[3] < m:
        raise ContractError(f"image must be at least {m}x{m}, got {tuple(image.shape[2:])}")
    padded, record = pad_to_multiple(image, m)
    out = unpad(model(padded), record)
    return out.clamp(0.0, 1.0)
