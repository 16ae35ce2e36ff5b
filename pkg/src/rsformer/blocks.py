"""Transformer-like convolution block (TCB) and its parts.

A TCB is the intra-stage feature learner of the network::

    x' = x + gamma_1 * CAM(LN(x))
    y  = x' + gamma_2 * CFFN(LN(x'))

where LN normalizes each pixel's channel vector, CAM is a convolution
attention module (large-kernel depth-wise attention map multiplied into a
value projection) and CFFN a depth-wise convolution feed-forward network.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checks import check_channels, check_finite
from .errors import ConfigError, ContractError
from .sampling import transposed_self_attention

LN_EPS = 1e-6
LAYER_SCALE_INIT = 1e-6


def channel_layer_norm(x, weight=None, bias=None, eps=LN_EPS):
    """Normalize the channel vector at every (n, h, w) location.

    Uses the biased variance, ``(x - mean) / sqrt(var + eps)``, followed by an
    optional per-channel affine transform.
    """
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    check_finite(x)
    mu = x.mean(dim=1, keepdim=True)
    var = (x - mu).pow(2).mean(dim=1, keepdim=True)
    y = (x - mu) / torch.sqrt(var + eps)
    if weight is not None:
        y = y * weight.view(1, -1, 1, 1)
    if bias is not None:
        y = y + bias.view(1, -1, 1, 1)
    return y


class ChannelLayerNorm(nn.Module):
    def __init__(self, channels: int, eps: float = LN_EPS):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return channel_layer_norm(x, self.weight, self.bias, self.eps)


class ConvAttention(nn.Module):
    """Convolution attention module.

    ``A = DW_kxk(PW_a(x))``, ``V = PW_v(x)``, output ``PW_out(A * V)``. No
    nonlinearity is applied to the attention map.

    ``padding_mode="circular"`` exists for testing translation covariance;
    the network always uses zero padding.
    """

    def __init__(self, channels: int, kernel_size: int = 7, padding_mode: str = "zeros"):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigError(f"attention kernel size must be odd and positive, got {kernel_size}")
        self.channels = channels
        self.attn_proj = nn.Conv2d(channels, channels, 1)
        self.attn_dw = nn.Conv2d(
            channels, channels, kernel_size, padding=kernel_size // 2, groups=channels, padding_mode=padding_mode
        )
        self.value_proj = nn.Conv2d(channels, channels, 1)
        self.out_proj = nn.Conv2d(channels, channels, 1)

    def attention_map(self, x):
        return self.attn_dw(self.attn_proj(x))

    def value(self, x):
        return self.value_proj(x)

    def forward(self, x):
        check_channels(x, self.channels, "ConvAttention")
        return self.out_proj(self.attention_map(x) * self.value(x))


class CFFN(nn.Module):
    """Convolution feed-forward network: expand, depth-wise 3x3, GELU, project."""

    def __init__(self, channels: int, expansion: float = 4.0):
        super().__init__()
        hidden = int(round(expansion * channels))
        if hidden < 1:
            raise ConfigError(f"ffn hidden width round({expansion}*{channels}) must be >= 1")
        self.channels = channels
        self.hidden = hidden
        self.expand = nn.Conv2d(channels, hidden, 1)
        self.dw = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.project = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        check_channels(x, self.channels, "CFFN")
        return self.project(F.gelu(self.dw(self.expand(x))))


class TransposedAttentionMixer(nn.Module):
    """Channel self-attention token mixer, used as the TSA ablation baseline.

    Q, K, V come from pointwise then depth-wise 3x3 projections; attention is
    a c-by-c map over channels followed by an output projection.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.qkv_dw = nn.Conv2d(channels * 3, channels * 3, 3, padding=1, groups=channels * 3)
        self.log_temperature = nn.Parameter(torch.zeros(()))
        self.out_proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        check_channels(x, self.channels, "TransposedAttentionMixer")
        n, c, h, w = x.shape
        q, k, v = self.qkv_dw(self.qkv(x)).chunk(3, dim=1)
        tokens = [t.flatten(2).transpose(1, 2) for t in (q, k, v)]
        out = transposed_self_attention(*tokens, mode="softmax", temperature=self.log_temperature.exp())
        return self.out_proj(out.transpose(1, 2).reshape(n, c, h, w))


class TCB(nn.Module):
    """Residual block with layer scale around a token mixer and a CFFN.

    ``token_mixer`` selects the first branch: ``"cam"`` (the default
    convolution attention), ``"tsa"`` (channel self-attention) or
    ``"identity"`` (a pass-through, the MetaFormer-style baseline).
    """

    def __init__(
        self,
        channels: int,
        kernel_size: int = 7,
        ffn_expansion: float = 4.0,
        layer_scale_init: float = LAYER_SCALE_INIT,
        token_mixer: str = "cam",
        padding_mode: str = "zeros",
    ):
        super().__init__()
        self.channels = channels
        self.norm1 = ChannelLayerNorm(channels)
        if token_mixer == "cam":
            self.mixer = ConvAttention(channels, kernel_size, padding_mode)
        elif token_mixer == "tsa":
            self.mixer = TransposedAttentionMixer(channels)
        elif token_mixer == "identity":
            self.mixer = nn.Identity()
        else:
            raise ConfigError(f"unknown token mixer {token_mixer!r}")
        self.gamma1 = nn.Parameter(torch.full((channels,), float(layer_scale_init)))
        self.norm2 = ChannelLayerNorm(channels)
        self.ffn = CFFN(channels, ffn_expansion)
        self.gamma2 = nn.Parameter(torch.full((channels,), float(layer_scale_init)))

    def forward(self, x):
        check_channels(x, self.channels, "TCB")
        x = x + self.mixer(self.norm1(x)) * self.gamma1.view(1, -1, 1, 1)
        x = x + self.ffn(self.norm2(x)) * self.gamma2.view(1, -1, 1, 1)
        return x
