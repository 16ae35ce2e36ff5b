"""Shape and finiteness guards used by the layers."""

from __future__ import annotations

import torch

from .errors import ConfigError, ContractError, NonFiniteError


def check_finite(x: torch.Tensor, what: str = "input") -> None:
    """Raise NonFiniteError naming the first non-finite index of ``x``."""
    finite = torch.isfinite(x)
    if bool(finite.all()):
        return
    flat = int((~finite).flatten().nonzero()[0])
    index = tuple(int(i) for i in torch.unravel_index(torch.tensor(flat), x.shape))
    raise NonFiniteError(f"{what} has non-finite value {x[index].item()} at index {index}")


def check_feature_map(x: torch.Tensor, what: str) -> None:
    if x.dim() != 4 or min(x.shape) < 1:
        raise ContractError(f"{what} expects a non-empty (N, C, H, W) tensor, got shape {tuple(x.shape)}")


def check_channels(x: torch.Tensor, channels: int, what: str) -> None:
    check_feature_map(x, what)
    if x.shape[1] != channels:
        raise ConfigError(f"{what} configured for {channels} channels, input has {x.shape[1]}")
