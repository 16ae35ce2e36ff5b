"""Controlled ablations: one trained variant per value of an axis."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .network import count_parameters
from .training import TrainConfig, evaluate, preflight, train

# axis -> ordered {label: changes}; model changes go to ModelConfig, loss to LossConfig
AXES = {
    "token_mixer": {
        "identity": {"model": {"token_mixer": "identity"}},
        "tsa": {"model": {"token_mixer": "tsa"}},
        "tcb": {"model": {"token_mixer": "cam"}},
    },
    "sampling": {
        "conv": {"model": {"sampling_mode": "conv"}},
        "shuffle": {"model": {"sampling_mode": "shuffle"}},
        "gasm": {"model": {"sampling_mode": "gasm"}},
        "glasm": {"model": {"sampling_mode": "glasm"}},
    },
    "loss": {
        "l1": {"loss": {"kind": "l1"}},
        "charbonnier": {"loss": {"kind": "charbonnier"}},
        "frequency": {"loss": {"kind": "frequency"}},
        "combined": {"loss": {"kind": "combined"}},
    },
    "attention_core": {
        "transposed": {"model": {"attention_sampling_core": "transposed"}},
        "spatial": {"model": {"attention_sampling_core": "spatial"}},
    },
}


def variant_config(base: TrainConfig, axis, label):
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    if label not in AXES[axis]:
        raise ConfigError(f"axis {axis!r} has no value {label!r}; choose from {list(AXES[axis])}")
    changes = AXES[axis][label]
    model = base.model.replace(**changes.get("model", {}))
    loss = dataclasses.replace(base.loss, **changes.get("loss", {}))
    out = dataclasses.replace(base, model=model, loss=loss)
    if base.checkpoint_dir:
        out.checkpoint_dir = str(Path(base.checkpoint_dir) / f"{axis}-{label}")
    if base.log_path:
        p = Path(base.log_path)
        out.log_path = str(p.with_name(f"{p.stem}-{axis}-{label}{p.suffix}"))
    return out


@dataclass
class AblationTable:
    axis: str
    rows: list = field(default_factory=list)

    @property
    def labels(self):
        return [r["variant"] for r in self.rows]

    def to_dict(self):
        return {"axis": self.axis, "rows": self.rows}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self):
        lines = [f"{self.axis:<14}  {'PSNR':>8}  {'SSIM':>7}  {'params':>10}"]
        for r in self.rows:
            lines.append(f"{r['variant']:<14}  {r['psnr']:>8.3f}  {r['ssim']:>7.4f}  {r['parameters']:>10,d}")
        return "\n".join(lines)


def ablation_run(base: TrainConfig, axis, pairs=None, val_pairs=None, values=None):
    """Train and score every variant along ``axis`` with a shared seed and budget.

    All variants are preflighted before any training starts.  Scores come
    from ``val_pairs`` (or the validation manifest), else the training pairs.
    """
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    labels = list(values) if values is not None else list(AXES[axis])
    configs = {label: variant_config(base, axis, label) for label in labels}
    for cfg in configs.values():
        cfg.validate()
        preflight(cfg.model, cfg.seed)

    table = AblationTable(axis)
    for label, cfg in configs.items():
        result = train(cfg, pairs=pairs, val_pairs=[])
        source = val_pairs or cfg.val_manifest or pairs or cfg.train_manifest
        report = evaluate(result.model, source)
        table.rows.append({
            "variant": label,
            "psnr": report.mean_psnr,
            "ssim": report.mean_ssim,
            "parameters": count_parameters(result.model),
            "final_loss": result.log.losses[-1],
            "data_signature": result.log.data_signature(),
        })
    return table
