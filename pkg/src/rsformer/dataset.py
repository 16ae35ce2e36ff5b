"""Paired-image datasets on disk.

Layout::

    <root>/degraded/NNNN.png
    <root>/clean/NNNN.png
    <root>/manifest.json

``manifest.json`` is UTF-8 JSON ``{"split": ..., "entries": [{"degraded":
"degraded/0000.png", "clean": "clean/0000.png"}, ...]}`` with paths relative
to the root.  Images are 8-bit RGB PNG on disk and float [0, 1] in memory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ContractError, ManifestError
from .synthesis import ImagePair, generate_snow, procedural_scene, sample_rain_params, synthesize_pair

MANIFEST_NAME = "manifest.json"


def load_image(path):
    """Read an image as a (1, 3, H, W) float32 tensor in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.copy()).permute(2, 0, 1)[None]


def save_image(x, path):
    """Write a (1, 3, H, W) or (3, H, W) tensor in [0, 1] as an 8-bit PNG."""
    x = x.detach().cpu()
    if x.dim() == 4:
        if x.shape[0] != 1:
            raise ContractError(f"save_image writes one image, got batch of {x.shape[0]}")
        x = x[0]
    arr = (x.clamp(0, 1).permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)
    return path


def _image_size(path):
    with Image.open(path) as img:
        img.load()
        return img.size


@dataclass
class DatasetManifest:
    root: Path
    entries: list = field(default_factory=list)
    split: str = "train"

    def __len__(self):
        return len(self.entries)

    def paths(self, index):
        degraded, clean = self.entries[index]
        return self.root / degraded, self.root / clean

    def load_pair(self, index):
        degraded, clean = self.paths(index)
        return ImagePair(load_image(degraded), load_image(clean), name=Path(self.entries[index][0]).stem)

    def load_pairs(self):
        return [self.load_pair(i) for i in range(len(self))]

    def to_json(self):
        return {
            "split": self.split,
            "entries": [{"degraded": d, "clean": c} for d, c in self.entries],
        }

    def write(self):
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")
        return path

    def validate(self, check_sizes=True):
        """Check every referenced file exists and decodes; optionally that halves match in size."""
        offenders = []
        for degraded, clean in self.entries:
            sizes = []
            for rel in (degraded, clean):
                p = self.root / rel
                if not p.is_file():
                    offenders.append(f"{rel} (missing)")
                    continue
                try:
                    sizes.append(_image_size(p))
                except Exception:
                    offenders.append(f"{rel} (undecodable)")
            if check_sizes and len(sizes) == 2 and sizes[0] != sizes[1]:
                offenders.append(f"{degraded} {sizes[0]} vs {clean} {sizes[1]} (size mismatch)")
        if offenders:
            raise ManifestError(f"dataset {self.root} has bad entries", offenders)
        return self


def load_manifest(path, check_sizes=True):
    """Read and validate ``manifest.json`` (pass the file or its directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise ManifestError(f"manifest not found at {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        entries = [(e["degraded"], e["clean"]) for e in data["entries"]]
        split = data.get("split", "train")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from None
    return DatasetManifest(path.parent, entries, split).validate(check_sizes)


def build_manifest(root, split=None):
    """Pair ``degraded/*.png`` with ``clean/*.png`` by file name and write the manifest.

    Unpaired, undecodable or mismatched files are reported together.  The
    split label is kept from an existing manifest unless ``split`` is given.
    """
    root = Path(root)
    deg_dir, clean_dir = root / "degraded", root / "clean"
    if not deg_dir.is_dir() or not clean_dir.is_dir():
        raise ManifestError(f"{root} must contain degraded/ and clean/ directories")
    degraded = {p.name for p in deg_dir.iterdir() if p.is_file()}
    clean = {p.name for p in clean_dir.iterdir() if p.is_file()}
    offenders = [f"degraded/{n} (no clean counterpart)" for n in sorted(degraded - clean)]
    offenders += [f"clean/{n} (no degraded counterpart)" for n in sorted(clean - degraded)]
    offenders += [f"degraded/{n} (not a .png)" for n in sorted(degraded & clean) if not n.lower().endswith(".png")]
    if offenders:
        raise ManifestError(f"dataset {root} has unpaired or unexpected files", offenders)
    if split is None:
        existing = root / MANIFEST_NAME
        split = "train"
        if existing.is_file():
            try:
                split = json.loads(existing.read_text(encoding="utf-8")).get("split", "train")
            except json.JSONDecodeError:
                pass
    names = sorted(degraded)
    manifest = DatasetManifest(root, [(f"degraded/{n}", f"clean/{n}") for n in names], split)
    manifest.validate()
    manifest.write()
    return manifest


def write_pairs(root, pairs, split="train"):
    """Write pairs to the standard layout and return the manifest."""
    root = Path(root)
    for i, pair in enumerate(pairs):
        save_image(pair.degraded, root / "degraded" / f"{i:04d}.png")
        save_image(pair.clean, root / "clean" / f"{i:04d}.png")
    return build_manifest(root, split)


def sample_patch(pair: ImagePair, size, seed=0):
    """Aligned random ``size`` x ``size`` crop of both halves."""
    h, w = pair.clean.shape[2:]
    if size > h or size > w or size < 1:
        raise ContractError(f"patch size {size} does not fit image {h}x{w}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    crop = (..., slice(top, top + size), slice(left, left + size))
    return ImagePair(pair.degraded[crop], pair.clean[crop], dict(pair.provenance), pair.name)


def dihedral(x, k):
    """Apply element ``k`` (0-7) of the square's symmetry group to the last two axes."""
    if k >= 4:
        x = x.flip(-1)
    return torch.rot90(x, k % 4, dims=(-2, -1))


def augment(pair: ImagePair, seed=0):
    """Apply one random flip/rotation, identically, to both halves."""
    k = int(np.random.default_rng(seed).integers(0, 8))
    return ImagePair(dihedral(pair.degraded, k), dihedral(pair.clean, k), dict(pair.provenance), pair.name)


def synthetic_pairs(count, height=64, width=64, seed=0, snow=True, rain=True, flakes=0.004):
    """``count`` procedural scenes degraded with seeded rain and/or snow."""
    if count < 1:
        raise ContractError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng([seed, 7])
    pairs = []
    for i in range(count):
        s = [int(v) for v in rng.integers(0, 2**31 - 1, 4)]
        clean = procedural_scene(height, width, s[0])
        rain_params = sample_rain_params(np.random.default_rng(s[1]), length=(10, max(10, min(30, height, width)))) if rain else None
        snow_params = generate_snow(height, width, s[2], flakes=flakes) if snow else None
        pair = synthesize_pair(clean, rain_params, snow_params, s[3])
        pair.name = f"{i:04d}"
        pairs.append(pair)
    return pairs
