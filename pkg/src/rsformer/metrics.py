"""Full-reference image quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ContractError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_batch(x):
    x = torch.as_tensor(x)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4:
        raise ContractError(f"expected (N, C, H, W) or (C, H, W) image, got shape {tuple(x.shape)}")
    return x.detach().to(torch.float64)


def psnr(x, y, peak=1.0):
    """PSNR in dB over all channels and pixels; ``inf`` for identical images."""
    x, y = _as_batch(x), _as_batch(y)
    if x.shape != y.shape:
        raise ContractError(f"psnr: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    mse = float((x - y).pow(2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_map(x, y, data_range=1.0):
    """Per-window SSIM over valid 11x11 Gaussian windows, shape (N, C, H-10, W-10)."""
    x, y = _as_batch(x), _as_batch(y)
    if x.shape != y.shape:
        raise ContractError(f"ssim: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ContractError(f"ssim needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {tuple(x.shape[-2:])}")
    c = x.shape[1]
    win = gaussian_window().expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)

    def filt(t):
        return F.conv2d(t, win, groups=c)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim(x, y, data_range=1.0):
    """Mean windowed SSIM, averaged over channels (and images)."""
    return float(ssim_map(x, y, data_range).mean())


@dataclass
class MetricsReport:
    names: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.psnr)

    @property
    def infinite_psnr(self):
        """Names of images whose PSNR is infinite (restoration identical to target)."""
        return [n for n, p in zip(self.names, self.psnr) if math.isinf(p)]

    @property
    def mean_psnr(self):
        return sum(self.psnr) / len(self.psnr) if self.psnr else math.nan

    @property
    def mean_ssim(self):
        return sum(self.ssim) / len(self.ssim) if self.ssim else math.nan

    def add(self, name, psnr_value, ssim_value):
        self.names.append(name)
        self.psnr.append(psnr_value)
        self.ssim.append(ssim_value)

    def to_dict(self):
        def num(v):
            return "inf" if math.isinf(v) else v

        return {
            "count": self.count,
            "mean_psnr": num(self.mean_psnr),
            "mean_ssim": self.mean_ssim,
            "infinite_psnr": self.infinite_psnr,
            "skipped": list(self.skipped),
            "images": [
                {"name": n, "psnr": num(p), "ssim": s} for n, p, s in zip(self.names, self.psnr, self.ssim)
            ],
        }

    def to_table(self):
        width = max([len("image")] + [len(n) for n in self.names])
        lines = [f"{'image':<{width}}  {'PSNR':>8}  {'SSIM':>7}"]
        for n, p, s in zip(self.names, self.psnr, self.ssim):
            lines.append(f"{n:<{width}}  {p:>8.3f}  {s:>7.4f}")
        lines.append(f"{'mean':<{width}}  {self.mean_psnr:>8.3f}  {self.mean_ssim:>7.4f}")
        if self.skipped:
            lines.append(f"skipped: {len(self.skipped)}")
        return "\n".join(lines)
