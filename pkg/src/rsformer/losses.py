"""Spatial-frequency training objective.

``total = charbonnier + beta * focal_frequency``.  Spectra are unnormalized
forward 2-D DFTs, so a per-bin mean of squared spectrum differences equals
``H * W`` times the pixel mean-squared error (Parseval).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError, ContractError

LOSS_KINDS = ("combined", "charbonnier", "l1", "frequency")


@dataclass
class LossConfig:
    eps: float = 1e-3
    alpha: float = 1.0
    beta: float = 0.1
    kind: str = "combined"

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"loss eps must be positive, got {self.eps!r}")
        if self.alpha < 0:
            raise ConfigError(f"loss alpha must be nonnegative, got {self.alpha!r}")
        if self.beta < 0:
            raise ConfigError(f"loss beta must be nonnegative, got {self.beta!r}")
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ContractError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def charbonnier(restored, target, eps=1e-3):
    """Mean over all elements of ``sqrt((restored - target)**2 + eps**2)``.

    Evaluated as ``eps + mean(d**2 / (sqrt(d**2 + eps**2) + eps))``, the same
    quantity without cancellation, which is exactly ``eps`` at ``d == 0``.
    """
    _same_shape(restored, target, "charbonnier")
    if not eps > 0:
        raise ContractError(f"charbonnier eps must be positive, got {eps}")
    sq = (restored - target).pow(2)
    return eps + (sq / (torch.sqrt(sq + eps * eps) + eps)).mean()


def l1(restored, target):
    _same_shape(restored, target, "l1")
    return (restored - target).abs().mean()


def dft2(image):
    """Unnormalized 2-D DFT over the last two axes (no 1/(MN) factor)."""
    if image.is_complex():
        raise ContractError("dft2 expects a real-valued image")
    return torch.fft.fft2(image, norm="backward")


def _power(z):
    return z.real.pow(2) + z.imag.pow(2)


def spectrum_distance(fr, fg):
    """``(1/(MN)) sum_{u,v} |Fr - Fg|**2``, averaged over all leading axes."""
    _same_shape(fr, fg, "spectrum_distance")
    return _power(fr - fg).mean()


def frequency_weights(restored, target, alpha=1.0):
    """Per-bin focal weights ``|Fr - Fg|**alpha``, scaled to [0, 1] per (image, channel).

    The weights are detached: no gradient flows through them.
    """
    _same_shape(restored, target, "frequency_weights")
    with torch.no_grad():
        diff = (dft2(restored) - dft2(target)).abs()
        w = diff.pow(alpha)
        peak = w.amax(dim=(-2, -1), keepdim=True)
        w = w / peak
        w = torch.nan_to_num(w, nan=0.0).clamp(0.0, 1.0)
    return w


def weighted_spectrum_distance(restored, target, weights):
    """Spectrum distance with fixed per-bin weights."""
    _same_shape(restored, target, "weighted_spectrum_distance")
    return (weights * _power(dft2(restored) - dft2(target))).mean()


def focal_frequency(restored, target, alpha=1.0):
    """Focal frequency loss: weighted per-bin spectral squared error."""
    if alpha < 0:
        raise ContractError(f"alpha must be nonnegative, got {alpha}")
    w = frequency_weights(restored, target, alpha)
    return weighted_spectrum_distance(restored, target, w)


def total_loss(restored, target, config: LossConfig = None):
    """Training objective selected by ``config.kind`` (default: the combined form)."""
    config = config or LossConfig()
    if config.kind == "combined":
        loss = charbonnier(restored, target, config.eps)
        if config.beta:
            loss = loss + config.beta * focal_frequency(restored, target, config.alpha)
        return loss
    if config.kind == "charbonnier":
        return charbonnier(restored, target, config.eps)
    if config.kind == "l1":
        return l1(restored, target)
    return focal_frequency(restored, target, config.alpha)
