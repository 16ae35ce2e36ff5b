"""Checkpoint archive.

A checkpoint is a zip archive with three members:

``config.json``
    The :class:`~rsformer.network.ModelConfig` as UTF-8 JSON.
``parameters.json``
    UTF-8 JSON list of records ``{"name", "shape", "dtype": "<f4", "offset", "count"}``
    in model order; ``offset`` and ``count`` are in elements.
``parameters.bin``
    All parameters concatenated as little-endian 32-bit floats.

An optional ``meta.json`` carries free-form training metadata.  Loading
rebuilds the model from the config and rejects any missing, extra or
mis-shaped parameter.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, ConfigError
from .network import ModelConfig, build_model

DTYPE = "<f4"


def save_checkpoint(model, path, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = []
    chunks = []
    offset = 0
    for name, p in model.named_parameters():
        arr = p.detach().cpu().numpy().astype(DTYPE)
        records.append({"name": name, "shape": list(arr.shape), "dtype": DTYPE, "offset": offset, "count": int(arr.size)})
        chunks.append(arr.reshape(-1))
        offset += arr.size
    blob = np.concatenate(chunks).astype(DTYPE).tobytes() if chunks else b""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps(model.config.to_dict(), indent=2))
        zf.writestr("parameters.json", json.dumps(records, indent=1))
        zf.writestr("parameters.bin", blob)
        if meta is not None:
            zf.writestr("meta.json", json.dumps(meta, indent=2))
    return path


def read_checkpoint(path):
    """Return ``(config_dict, {name: float32 array}, meta)`` without building a model."""
    try:
        with zipfile.ZipFile(path) as zf:
            names = set(zf.namelist())
            missing = {"config.json", "parameters.json", "parameters.bin"} - names
            if missing:
                raise CheckpointError(f"{path}: missing archive member(s) {sorted(missing)}")
            config = json.loads(zf.read("config.json").decode("utf-8"))
            records = json.loads(zf.read("parameters.json").decode("utf-8"))
            blob = zf.read("parameters.bin")
            meta = json.loads(zf.read("meta.json").decode("utf-8")) if "meta.json" in names else None
    except (OSError, zipfile.BadZipFile, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    flat = np.frombuffer(blob, dtype=DTYPE)
    arrays = {}
    for rec in records:
        if rec.get("dtype") != DTYPE:
            raise CheckpointError(f"{path}: parameter {rec.get('name')!r} has unsupported dtype {rec.get('dtype')!r}")
        start, count = int(rec["offset"]), int(rec["count"])
        if start + count > flat.size or int(np.prod(rec["shape"], dtype=np.int64)) != count:
            raise CheckpointError(f"{path}: parameter {rec['name']!r} record is inconsistent with the data blob")
        arrays[rec["name"]] = flat[start : start + count].reshape(rec["shape"])
    return config, arrays, meta


def load_checkpoint(path, dtype=torch.float32):
    """Rebuild a model from a checkpoint; returns ``(model, meta)``."""
    config_dict, arrays, meta = read_checkpoint(path)
    try:
        config = ModelConfig.from_dict(config_dict)
    except ConfigError as exc:
        raise CheckpointError(f"{path}: invalid model config ({exc})") from None
    model = build_model(config, seed=0, dtype=dtype)
    expected = dict(model.named_parameters())
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise CheckpointError(f"{path}: parameter set does not match config (missing {missing[:5]}, extra {extra[:5]})")
    wrong = [n for n, p in expected.items() if tuple(arrays[n].shape) != tuple(p.shape)]
    if wrong:
        raise CheckpointError(
            f"{path}: shape mismatch for {wrong[:5]} "
            f"(e.g. {wrong[0]}: checkpoint {tuple(arrays[wrong[0]].shape)}, config {tuple(expected[wrong[0]].shape)})"
        )
    with torch.no_grad():
        for name, p in expected.items():
            p.copy_(torch.from_numpy(arrays[name].copy()).to(dtype))
    return model, meta
