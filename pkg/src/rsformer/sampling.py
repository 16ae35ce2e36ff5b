"""Self-attention primitives and the cross-stage samplers.

Token tensors are laid out ``[..., n, c]`` (spatial tokens by channels), one
matrix per batch item.  Feature maps are ``(N, C, H, W)``.

The global-local samplers resample only the value path: V is produced at the
*target* resolution while Q and K stay at the *source* resolution.  Channel
(transposed) attention builds a c-by-c map from Q and K and applies it to V,
so the output inherits V's spatial size.  A depth-wise 3x3 local branch on V
is added on top.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checks import check_channels
from .errors import ConfigError, ContractError

ATTENTION_MODES = ("raw", "softmax")
ATTENTION_CORES = ("transposed", "spatial")


def _check_mode(mode):
    if mode not in ATTENTION_MODES:
        raise ConfigError(f"attention mode must be one of {ATTENTION_MODES}, got {mode!r}")


def transposed_self_attention(q, k, v, mode="raw", temperature=1.0):
    """Channel self-attention ``(Q^T K V^T)^T``.

    ``q`` and ``k`` are ``[..., n, c]`` and must share ``n``; ``v`` is
    ``[..., n_v, c]``.  Returns ``[..., n_v, c]``: the spatial size always
    follows V.  In ``"softmax"`` mode Q and K are L2-normalized along the
    token axis and each row of the c-by-c map is divided by ``temperature``
    and softmax-normalized.
    """
    _check_mode(mode)
    if q.dim() < 2 or q.shape[-2] != k.shape[-2] or not (q.shape[-1] == k.shape[-1] == v.shape[-1]):
        raise ContractError(
            f"transposed attention needs Q, K with equal token counts and a shared channel count; "
            f"got Q {tuple(q.shape)}, K {tuple(k.shape)}, V {tuple(v.shape)}"
        )
    if mode == "softmax":
        q = F.normalize(q, dim=-2)
        k = F.normalize(k, dim=-2)
    attn = q.transpose(-2, -1) @ k
    if mode == "softmax":
        attn = torch.softmax(attn / temperature, dim=-1)
    return v @ attn.transpose(-2, -1)


def spatial_self_attention(q, k, v, mode="raw", temperature=1.0):
    """Token self-attention ``Q K^T V``, evaluated left to right.

    ``q`` is ``[..., n_q, c]``, ``k`` is ``[..., n_k, c]`` and ``v`` is
    ``[..., n_k, c_v]``; the result is ``[..., n_q, c_v]``.  The n-by-n map
    makes this quadratic in the token count.
    """
    _check_mode(mode)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ContractError(
            f"spatial attention needs matching Q/K channels and K/V token counts; "
            f"got Q {tuple(q.shape)}, K {tuple(k.shape)}, V {tuple(v.shape)}"
        )
    if mode == "softmax":
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
    attn = q @ k.transpose(-2, -1)
    if mode == "softmax":
        attn = torch.softmax(attn / temperature, dim=-1)
    return attn @ v


def to_tokens(x):
    """(N, C, H, W) -> (N, H*W, C)."""
    return x.flatten(2).transpose(1, 2)


def from_tokens(t, h, w):
    """(N, H*W, C) -> (N, C, H, W)."""
    n, _, c = t.shape
    return t.transpose(1, 2).reshape(n, c, h, w)


def _check_even_spatial(x, what):
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ContractError(
            f"{what} needs even height and width, got {tuple(x.shape[2:])}; pad the input first"
        )


def _check_even_channels(x, what):
    if x.shape[1] % 2:
        raise ContractError(f"{what} needs an even channel count, got {x.shape[1]}")


class _GlobalLocalSampler(nn.Module):
    """Shared attention and local paths of GLAD and GLAU."""

    def __init__(self, source_channels, target_channels, attention_core, attention_mode, local_branch):
        super().__init__()
        if attention_core not in ATTENTION_CORES:
            raise ConfigError(f"attention core must be one of {ATTENTION_CORES}, got {attention_core!r}")
        _check_mode(attention_mode)
        self.in_channels = source_channels
        self.out_channels = target_channels
        self.attention_core = attention_core
        self.attention_mode = attention_mode
        # spatial attention needs Q, K, V on the same token grid, so Q and K
        # are projected from the resampled value map instead of the source
        qk_in = source_channels if attention_core == "transposed" else target_channels
        self.query = nn.Conv2d(qk_in, target_channels, 1)
        self.key = nn.Conv2d(qk_in, target_channels, 1)
        self.log_temperature = nn.Parameter(torch.zeros(()))
        self.local = (
            nn.Conv2d(target_channels, target_channels, 3, padding=1, groups=target_channels)
            if local_branch
            else None
        )

    def resample(self, x):
        raise NotImplementedError

    def attention_path(self, x, v):
        h, w = v.shape[2:]
        src = x if self.attention_core == "transposed" else v
        q = to_tokens(self.query(src))
        k = to_tokens(self.key(src))
        attend = transposed_self_attention if self.attention_core == "transposed" else spatial_self_attention
        out = attend(q, k, to_tokens(v), mode=self.attention_mode, temperature=self.log_temperature.exp())
        return from_tokens(out, h, w)

    def local_path(self, v):
        if self.local is None:
            return torch.zeros_like(v)
        return self.local(v)

    def forward(self, x):
        v = self.resample(x)
        out = self.attention_path(x, v)
        if self.local is not None:
            out = out + self.local(v)
        return out


class GLAD(_GlobalLocalSampler):
    """Global-local attention down-sampler: (c, H, W) -> (2c, H/2, W/2).

    V comes from a stride-2 3x3 convolution (reflect padding, so constant
    maps stay constant); Q and K are pointwise projections of the input.
    ``local_branch=False`` gives the attention-only variant.
    """

    def __init__(self, in_channels, attention_core="transposed", attention_mode="softmax", local_branch=True):
        super().__init__(in_channels, 2 * in_channels, attention_core, attention_mode, local_branch)
        self.value_resample = nn.Conv2d(
            in_channels, 2 * in_channels, 3, stride=2, padding=1, padding_mode="reflect"
        )

    def resample(self, x):
        check_channels(x, self.in_channels, "GLAD")
        _check_even_spatial(x, "GLAD")
        return self.value_resample(x)


class GLAU(_GlobalLocalSampler):
    """Global-local attention up-sampler: (c, H, W) -> (c/2, 2H, 2W).

    V comes from a 2x2 stride-2 transposed convolution; Q and K are pointwise
    projections of the input at the source resolution.
    """

    def __init__(self, in_channels, attention_core="transposed", attention_mode="softmax", local_branch=True):
        if in_channels % 2:
            raise ContractError(f"GLAU needs an even channel count, got {in_channels}")
        super().__init__(in_channels, in_channels // 2, attention_core, attention_mode, local_branch)
        self.value_resample = nn.ConvTranspose2d(in_channels, in_channels // 2, 2, stride=2)

    def resample(self, x):
        check_channels(x, self.in_channels, "GLAU")
        return self.value_resample(x)


class ConvDown(nn.Module):
    """Stride-2 3x3 convolution doubling the channel count."""

    def __init__(self, in_channels):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = 2 * in_channels
        self.conv = nn.Conv2d(in_channels, 2 * in_channels, 3, stride=2, padding=1, padding_mode="reflect")

    def forward(self, x):
        check_channels(x, self.in_channels, "ConvDown")
        _check_even_spatial(x, "ConvDown")
        return self.conv(x)


class ConvUp(nn.Module):
    """Stride-2 2x2 transposed convolution halving the channel count."""

    def __init__(self, in_channels):
        super().__init__()
        if in_channels % 2:
            raise ContractError(f"ConvUp needs an even channel count, got {in_channels}")
        self.in_channels = in_channels
        self.out_channels = in_channels // 2
        self.conv = nn.ConvTranspose2d(in_channels, in_channels // 2, 2, stride=2)

    def forward(self, x):
        check_channels(x, self.in_channels, "ConvUp")
        return self.conv(x)


def space_to_depth(x, factor=2):
    """Pixel-unshuffle: out[:, c*f*f + i*f + j, h, w] = x[:, c, f*h + i, f*w + j]."""
    return F.pixel_unshuffle(x, factor)


def depth_to_space(x, factor=2):
    """Inverse of :func:`space_to_depth`."""
    return F.pixel_shuffle(x, factor)


class ShuffleDown(nn.Module):
    """Space-to-depth by 2 followed by a pointwise projection 4c -> 2c."""

    def __init__(self, in_channels):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = 2 * in_channels
        self.proj = nn.Conv2d(4 * in_channels, 2 * in_channels, 1)

    def forward(self, x):
        check_channels(x, self.in_channels, "ShuffleDown")
        _check_even_spatial(x, "ShuffleDown")
        return self.proj(space_to_depth(x))


class ShuffleUp(nn.Module):
    """Pointwise projection c -> 2c followed by depth-to-space by 2."""

    def __init__(self, in_channels):
        super().__init__()
        if in_channels % 2:
            raise ContractError(f"ShuffleUp needs an even channel count, got {in_channels}")
        self.in_channels = in_channels
        self.out_channels = in_channels // 2
        self.proj = nn.Conv2d(in_channels, 2 * in_channels, 1)

    def forward(self, x):
        check_channels(x, self.in_channels, "ShuffleUp")
        return depth_to_space(self.proj(x))


SAMPLING_MODES = ("glasm", "gasm", "conv", "shuffle")


def make_downsampler(mode, channels, attention_core="transposed", attention_mode="softmax"):
    if mode == "glasm":
        return GLAD(channels, attention_core, attention_mode, local_branch=True)
    if mode == "gasm":
        return GLAD(channels, attention_core, attention_mode, local_branch=False)
    if mode == "conv":
        return ConvDown(channels)
    if mode == "shuffle":
        return ShuffleDown(channels)
    raise ConfigError(f"sampling mode must be one of {SAMPLING_MODES}, got {mode!r}")


def make_upsampler(mode, channels, attention_core="transposed", attention_mode="softmax"):
    if mode == "glasm":
        return GLAU(channels, attention_core, attention_mode, local_branch=True)
    if mode == "gasm":
        return GLAU(channels, attention_core, attention_mode, local_branch=False)
    if mode == "conv":
        return ConvUp(channels)
    if mode == "shuffle":
        return ShuffleUp(channels)
    raise ConfigError(f"sampling mode must be one of {SAMPLING_MODES}, got {mode!r}")
