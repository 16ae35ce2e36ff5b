"""Training loop, evaluation and the preflight invariant suite."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import DatasetManifest, augment, load_manifest, sample_patch
from .errors import ConfigError, ContractError, ManifestError, RSFormerError, TrainingError
from .losses import LossConfig, total_loss
from .metrics import MetricsReport, psnr, ssim
from .network import ModelConfig, build_model, infer, pad_to_multiple, unpad
from .sampling import make_downsampler, make_upsampler

log = logging.getLogger(__name__)


def cosine_lr(step, total_steps, lr_initial=2e-4, lr_final=1e-7):
    """Cosine annealing from ``lr_initial`` at step 0 to ``lr_final`` at ``total_steps``."""
    if total_steps < 1:
        raise ContractError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    # convex form keeps both endpoints exact in floating point
    weight = 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
    return lr_initial * weight + lr_final * (1.0 - weight)


@dataclass
class TrainConfig:
    """Training hyperparameters.

    Units: learning rates per step, ``patch_size`` in pixels, cadences in
    steps.  Either ``total_steps`` or ``epochs`` fixes the run length; epochs
    are converted with ``ceil(len(train set) / batch_size)`` steps each.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    batch_size: int = 32
    patch_size: int = 128
    total_steps: Optional[int] = 1000
    epochs: Optional[int] = None
    lr_initial: float = 2e-4
    lr_final: float = 1e-7
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: Optional[float] = 1.0
    seed: int = 0
    augment: bool = True
    train_manifest: Optional[str] = None
    val_manifest: Optional[str] = None
    checkpoint_dir: Optional[str] = None
    checkpoint_every: int = 100
    val_every: int = 100
    log_path: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.loss, dict):
            known = {f.name for f in dataclasses.fields(LossConfig)}
            unknown = set(self.loss) - known
            if unknown:
                raise ConfigError(f"unknown loss config field(s): {sorted(unknown)}")
            self.loss = LossConfig(**self.loss)
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.batch_size, int) and self.batch_size >= 1, f"batch_size must be a positive integer, got {self.batch_size!r}")
        need(isinstance(self.patch_size, int) and self.patch_size >= 1, f"patch_size must be a positive integer, got {self.patch_size!r}")
        need(
            self.patch_size % self.model.multiple == 0,
            f"patch_size {self.patch_size} must be divisible by 2**(levels-1) = {self.model.multiple}",
        )
        need(self.total_steps is not None or self.epochs is not None, "set total_steps or epochs")
        if self.total_steps is not None:
            need(isinstance(self.total_steps, int) and self.total_steps >= 1, f"total_steps must be a positive integer, got {self.total_steps!r}")
        if self.epochs is not None:
            need(isinstance(self.epochs, int) and self.epochs >= 1, f"epochs must be a positive integer, got {self.epochs!r}")
        need(self.lr_initial > 0 and self.lr_final > 0, "learning rates must be positive")
        need(self.lr_final <= self.lr_initial, f"lr_final {self.lr_final} exceeds lr_initial {self.lr_initial}")
        need(len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas), f"betas must be two values in [0, 1), got {self.betas}")
        need(self.adam_eps > 0, "adam_eps must be positive")
        need(self.grad_clip is None or self.grad_clip > 0, "grad_clip must be positive or null")
        need(self.checkpoint_every >= 1 and self.val_every >= 1, "cadences must be >= 1")

    def steps_for(self, dataset_size):
        if self.total_steps is not None:
            return self.total_steps
        return self.epochs * math.ceil(dataset_size / self.batch_size)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config field(s): {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class TrainingLog:
    steps: list = field(default_factory=list)
    validations: list = field(default_factory=list)

    def append(self, entry):
        if self.steps and entry["step"] <= self.steps[-1]["step"]:
            raise TrainingError(f"log steps must increase, got {entry['step']} after {self.steps[-1]['step']}")
        self.steps.append(entry)

    @property
    def losses(self):
        return [e["loss"] for e in self.steps]

    @property
    def learning_rates(self):
        return [e["lr"] for e in self.steps]

    def data_signature(self):
        """Digest of the sampled data order (pair indices and crop/augment seeds)."""
        h = hashlib.sha256()
        for e in self.steps:
            h.update(json.dumps(e["batch"]).encode())
        return h.hexdigest()


@dataclass
class TrainResult:
    model: torch.nn.Module
    log: TrainingLog
    checkpoint: Optional[Path] = None


def preflight(config: ModelConfig, seed=0):
    """Run the shape and identity invariants for ``config``; raise on failure.

    Checks end-to-end shape preservation, zero-head identity with the global
    residual, zero-layer-scale block identity, sampler shape contracts and the
    pad/unpad round trip.  Returns the names of the checks that ran.
    """
    passed = []
    m = config.multiple
    model = build_model(config, seed, dtype=torch.float64)
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 3, 2 * m, 2 * m, generator=g, dtype=torch.float64)

    def fail(msg):
        raise ContractError(f"preflight failed: {msg}")

    with torch.no_grad():
        if model(x).shape != x.shape:
            fail("forward does not preserve shape")
        passed.append("forward_shape")

        if config.global_residual:
            for p in model.head.parameters():
                p.zero_()
            if not torch.equal(model(x), x):
                fail("zero head with global residual is not the identity")
            passed.append("zero_head_identity")

        block = model.encoders[0][0]
        block.gamma1.zero_()
        block.gamma2.zero_()
        feat = torch.rand(1, config.base_width, 2 * m, 2 * m, generator=g, dtype=torch.float64)
        if not torch.equal(block(feat), feat):
            fail("zero layer scale block is not the identity")
        passed.append("zero_layer_scale_identity")

        for c in config.widths[:-1]:
            down = make_downsampler(config.sampling_mode, c, config.attention_sampling_core, config.attention_mode).double()
            up = make_upsampler(config.sampling_mode, 2 * c, config.attention_sampling_core, config.attention_mode).double()
            f = torch.rand(1, c, 4, 6, generator=g, dtype=torch.float64)
            d = down(f)
            if d.shape != (1, 2 * c, 2, 3):
                fail(f"down-sampler at width {c} produced {tuple(d.shape)}")
            if up(d).shape != f.shape:
                fail(f"up-sampler at width {2 * c} produced {tuple(up(d).shape)}")
        passed.append("sampler_contracts")

        odd = torch.rand(1, 3, m + 3, 2 * m + 1, generator=g, dtype=torch.float64)
        padded, record = pad_to_multiple(odd, m)
        if padded.shape[2] % m or padded.shape[3] % m or not torch.equal(unpad(padded, record), odd):
            fail("pad/unpad round trip")
        passed.append("pad_unpad_round_trip")
    return passed


class PairSampler:
    """Seeded batch sampler: pair indices, aligned crops and augmentations."""

    def __init__(self, pairs, batch_size, patch_size, seed, use_augment=True):
        if not pairs:
            raise ManifestError("training set is empty")
        self.pairs = pairs
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.use_augment = use_augment
        self.rng = np.random.default_rng([seed, 1])

    def next_batch(self):
        indices = self.rng.integers(0, len(self.pairs), self.batch_size)
        seeds = self.rng.integers(0, 2**31 - 1, (self.batch_size, 2))
        degraded, clean = [], []
        for idx, (crop_seed, aug_seed) in zip(indices, seeds):
            pair = sample_patch(self.pairs[idx], self.patch_size, int(crop_seed))
            if self.use_augment:
                pair = augment(pair, int(aug_seed))
            degraded.append(pair.degraded)
            clean.append(pair.clean)
        record = [[int(i), int(a), int(b)] for i, (a, b) in zip(indices, seeds)]
        return torch.cat(degraded), torch.cat(clean), record


def _resolve_pairs(source):
    if source is None:
        raise ConfigError("train_manifest is not set")
    if isinstance(source, (list, tuple)):
        return list(source)
    if isinstance(source, DatasetManifest):
        return source.load_pairs()
    return load_manifest(source).load_pairs()


def train(config: TrainConfig, pairs=None, val_pairs=None, model=None):
    """Optimize the combined loss with Adam under a cosine schedule.

    ``pairs``/``val_pairs`` override the manifests in ``config`` (lists of
    :class:`ImagePair`).  Deterministic for a fixed config on one platform.
    """
    config.validate()
    preflight(config.model, config.seed)
    train_pairs = _resolve_pairs(pairs if pairs is not None else config.train_manifest)
    if val_pairs is None and config.val_manifest is not None:
        val_pairs = load_manifest(config.val_manifest).load_pairs()

    torch.manual_seed(config.seed)
    if model is None:
        model = build_model(config.model, config.seed)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_initial, betas=config.betas, eps=config.adam_eps)
    sampler = PairSampler(train_pairs, config.batch_size, config.patch_size, config.seed, config.augment)
    total = config.steps_for(len(train_pairs))
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    log_file = None
    if config.log_path:
        Path(config.log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(config.log_path, "w", encoding="utf-8")
    history = TrainingLog()
    last_ckpt = None
    start = time.perf_counter()
    try:
        for step in range(total):
            lr = cosine_lr(step, total, config.lr_initial, config.lr_final)
            for group in optimizer.param_groups:
                group["lr"] = lr
            degraded, clean, batch = sampler.next_batch()
            restored = model(degraded)
            loss = total_loss(restored, clean, config.loss)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at step {step}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            entry = {"step": step, "loss": loss.item(), "lr": lr, "time": time.perf_counter() - start, "batch": batch}
            history.append(entry)
            if log_file:
                log_file.write(json.dumps(entry) + "\n")
            done = step + 1
            if val_pairs and (done % config.val_every == 0 or done == total):
                report = evaluate(model, val_pairs)
                record = {"step": step, "psnr": report.mean_psnr, "ssim": report.mean_ssim}
                history.validations.append(record)
                if log_file:
                    log_file.write(json.dumps({"validation": record}) + "\n")
                model.train()
            if ckpt_dir and (done % config.checkpoint_every == 0 or done == total):
                last_ckpt = save_checkpoint(model, ckpt_dir / f"step_{done:06d}.ckpt", {"step": done, "train": config.to_dict()})
    finally:
        if log_file:
            log_file.close()
    model.eval()
    return TrainResult(model, history, last_ckpt)


def evaluate(model, source, warn=log.warning):
    """Score ``infer`` outputs against clean images.

    ``model`` may be a module or a checkpoint path; ``source`` a manifest,
    manifest path or list of pairs.  Pairs whose halves differ in shape are
    skipped with a warning and listed in ``report.skipped``.
    """
    if isinstance(model, (str, Path)):
        model, _ = load_checkpoint(model)
    if isinstance(source, (str, Path)):
        source = load_manifest(source, check_sizes=False)
    if isinstance(source, DatasetManifest):
        if len(source) == 0:
            raise ManifestError(f"manifest {source.root} has no entries")
        loaders = [lambda i=i: source.load_pair(i) for i in range(len(source))]
        names = [Path(d).stem for d, _ in source.entries]
    else:
        pairs = list(source)
        if not pairs:
            raise ManifestError("nothing to evaluate: empty pair list")
        loaders = [lambda p=p: p for p in pairs]
        names = [p.name or f"{i:04d}" for i, p in enumerate(pairs)]
    model.eval()
    dtype = next(model.parameters()).dtype
    report = MetricsReport()
    for name, load in zip(names, loaders):
        try:
            pair = load()
        except ContractError as exc:
            warn(f"skipping {name}: {exc}")
            report.skipped.append(name)
            continue
        restored = infer(model, pair.degraded.to(dtype))
        report.add(name, psnr(restored, pair.clean), ssim(restored, pair.clean))
    if report.count == 0:
        raise ManifestError("every pair was skipped", report.skipped)
    return report
