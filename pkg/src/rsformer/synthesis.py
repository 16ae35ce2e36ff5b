"""Procedural rain-by-snow degradation.

Degraded images are built rain first, then snow, since snow particles
occlude rain streaks::

    rainy    = clip(clean + rain_layer, 0, 1)
    degraded = clip(aberration * z + rainy * (1 - z), 0, 1)

Rain is a motion-blurred sparse noise field; snow is a particle mask ``z``
blended with a near-white aberration map ``a``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class RainParams:
    density: float = 0.004
    streak_length: int = 20
    angle: float = 10.0
    intensity: float = 0.6

    def __post_init__(self):
        # density 0 is accepted as "no rain" (the limit of sparse seeding)
        if not 0.0 <= self.density <= 1.0:
            raise ConfigError(f"rain density must be in [0, 1], got {self.density}")
        if not (isinstance(self.streak_length, int) and 10 <= self.streak_length <= 60):
            raise ConfigError(f"rain streak_length must be an integer in [10, 60], got {self.streak_length}")
        if not -45.0 <= self.angle <= 45.0:
            raise ConfigError(f"rain angle must be in [-45, 45] degrees, got {self.angle}")
        if not 0.0 < self.intensity <= 1.0:
            raise ConfigError(f"rain intensity must be in (0, 1], got {self.intensity}")


@dataclass
class SnowParams:
    """Snow mask ``z`` (1, 1, H, W) and aberration ``a`` (1, 3, H, W), both in [0, 1]."""

    mask: torch.Tensor
    aberration: torch.Tensor

    def __post_init__(self):
        if self.mask.dim() != 4 or self.mask.shape[:2] != (1, 1):
            raise ContractError(f"snow mask must be (1, 1, H, W), got {tuple(self.mask.shape)}")
        if self.aberration.dim() != 4 or self.aberration.shape[:2] != (1, 3):
            raise ContractError(f"snow aberration must be (1, 3, H, W), got {tuple(self.aberration.shape)}")
        if self.mask.shape[2:] != self.aberration.shape[2:]:
            raise ContractError("snow mask and aberration must share spatial size")
        for name, t in (("mask", self.mask), ("aberration", self.aberration)):
            if t.min() < 0 or t.max() > 1:
                raise ContractError(f"snow {name} values must lie in [0, 1]")

    @classmethod
    def none(cls, height, width):
        """A snow layer with z == 0 everywhere (no snow)."""
        return cls(torch.zeros(1, 1, height, width), torch.ones(1, 3, height, width))


def streak_kernel(length, angle):
    """Binary line kernel of ``length`` pixels at ``angle`` degrees from horizontal."""
    size = length if length % 2 else length + 1
    kernel = np.zeros((size, size), dtype=np.float64)
    centre = (size - 1) / 2
    theta = math.radians(angle)
    for t in np.linspace(-(length - 1) / 2, (length - 1) / 2, 4 * length):
        col = int(round(centre + t * math.cos(theta)))
        row = int(round(centre - t * math.sin(theta)))
        kernel[row, col] = 1.0
    return kernel


def generate_rain_layer(height, width, params: RainParams, seed=0):
    """Rain streak layer (1, 1, H, W) in [0, 1], deterministic per seed."""
    if height < params.streak_length or width < params.streak_length:
        raise ContractError(
            f"image {height}x{width} is smaller than the streak length {params.streak_length}"
        )
    rng = np.random.default_rng(seed)
    u = rng.random((height, width))
    brightness = rng.uniform(0.5, 1.0, size=(height, width))
    seeds = np.where(u < params.density, brightness, 0.0)
    layer = ndimage.convolve(seeds, streak_kernel(params.streak_length, params.angle), mode="constant")
    layer = ndimage.gaussian_filter(layer, 0.5)
    layer = np.clip(layer, 0.0, 1.0) * params.intensity
    return torch.from_numpy(layer).float()[None, None]


def _check_image(x, what):
    if x.dim() != 4 or x.shape[1] != 3:
        raise ContractError(f"{what} must be (N, 3, H, W), got {tuple(x.shape)}")


def composite_rain(clean, rain_layer):
    """``clip(clean + rain, 0, 1)`` with the rain layer broadcast over channels."""
    _check_image(clean, "clean image")
    if rain_layer.dim() != 4 or rain_layer.shape[1] not in (1, clean.shape[1]) or rain_layer.shape[2:] != clean.shape[2:]:
        raise ContractError(f"rain layer {tuple(rain_layer.shape)} does not match image {tuple(clean.shape)}")
    return (clean + rain_layer).clamp(0.0, 1.0)


def composite_snow(image, snow: SnowParams):
    """``clip(a * z + image * (1 - z), 0, 1)``."""
    _check_image(image, "image")
    if snow.mask.shape[2:] != image.shape[2:]:
        raise ContractError(f"snow mask {tuple(snow.mask.shape)} does not match image {tuple(image.shape)}")
    z = snow.mask
    return (snow.aberration * z + image * (1 - z)).clamp(0.0, 1.0)


def _disk(radius):
    r = int(math.ceil(radius)) + 1
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    # one-pixel soft edge
    return np.clip(radius + 0.5 - np.hypot(yy, xx), 0.0, 1.0)


def generate_snow(height, width, seed=0, flakes=0.004, max_radius=3.0, opacity=(0.6, 1.0), blur=0.7):
    """Random snow particles and a near-white aberration map.

    ``flakes`` is the expected number of particles per pixel.  The aberration
    is 0.95 plus low-amplitude blurred noise, per channel.
    """
    rng = np.random.default_rng(seed)
    mask = np.zeros((height, width))
    count = rng.poisson(flakes * height * width)
    for _ in range(count):
        radius = rng.uniform(0.5, max_radius)
        disk = _disk(radius) * rng.uniform(*opacity)
        r = disk.shape[0] // 2
        cy, cx = rng.integers(0, height), rng.integers(0, width)
        y0, y1 = max(cy - r, 0), min(cy + r + 1, height)
        x0, x1 = max(cx - r, 0), min(cx + r + 1, width)
        patch = disk[y0 - (cy - r) : y1 - (cy - r), x0 - (cx - r) : x1 - (cx - r)]
        mask[y0:y1, x0:x1] = np.maximum(mask[y0:y1, x0:x1], patch)
    if blur:
        mask = ndimage.gaussian_filter(mask, blur)
    mask = np.clip(mask, 0.0, 1.0)
    noise = ndimage.gaussian_filter(rng.normal(0.0, 0.04, (3, height, width)), (0, 4, 4))
    aberration = np.clip(0.95 + noise, 0.0, 1.0)
    return SnowParams(
        torch.from_numpy(mask).float()[None, None],
        torch.from_numpy(aberration).float()[None],
    )


@dataclass
class ImagePair:
    """Degraded and clean images, each (1, 3, H, W) in [0, 1]."""

    degraded: torch.Tensor
    clean: torch.Tensor
    provenance: dict = field(default_factory=dict)
    name: Optional[str] = None

    def __post_init__(self):
        if self.degraded.shape != self.clean.shape:
            raise ContractError(
                f"pair halves differ in shape: degraded {tuple(self.degraded.shape)} vs clean {tuple(self.clean.shape)}"
            )


def synthesize_pair(clean, rain: Optional[RainParams], snow: Optional[SnowParams], seed=0):
    """Degrade ``clean`` with rain then snow; either may be ``None``."""
    _check_image(clean, "clean image")
    h, w = clean.shape[2:]
    degraded = clean
    if rain is not None and rain.density > 0:
        degraded = composite_rain(degraded, generate_rain_layer(h, w, rain, seed))
    if snow is not None:
        degraded = composite_snow(degraded, snow)
    provenance = {
        "seed": seed,
        "rain": asdict(rain) if rain is not None else None,
        "snow_coverage": float(snow.mask.mean()) if snow is not None else 0.0,
    }
    return ImagePair(degraded.clone(), clean.clone(), provenance)


def procedural_scene(height, width, seed=0):
    """A clean synthetic scene: smooth colour gradient, blurred texture and shapes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    img = np.empty((3, height, width))
    for c in range(3):
        a, b, base = rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(0.2, 0.6)
        img[c] = base + a * yy + b * xx
    texture = ndimage.gaussian_filter(rng.normal(0, 1, (height, width)), max(height, width) / 16)
    texture /= np.abs(texture).max() + 1e-12
    img += 0.1 * texture[None]
    for _ in range(rng.integers(3, 7)):
        colour = rng.uniform(0.05, 0.8, size=3)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry, rx = rng.uniform(0.05, 0.3) * height, rng.uniform(0.05, 0.3) * width
        if rng.random() < 0.5:
            region = ((yy * max(height, width) - cy) / ry) ** 2 + ((xx * max(height, width) - cx) / rx) ** 2 <= 1
        else:
            region = (np.abs(yy * max(height, width) - cy) <= ry) & (np.abs(xx * max(height, width) - cx) <= rx)
        img[:, region] = colour[:, None]
    img = ndimage.gaussian_filter(img, (0, 0.8, 0.8))
    return torch.from_numpy(np.clip(img, 0.0, 1.0)).float()[None]


def sample_rain_params(rng, density=(0.002, 0.006), length=(10, 30), angle=(-20.0, 20.0), intensity=(0.4, 0.8)):
    return RainParams(
        density=float(rng.uniform(*density)),
        streak_length=int(rng.integers(length[0], length[1] + 1)),
        angle=float(rng.uniform(*angle)),
        intensity=float(rng.uniform(*intensity)),
    )
