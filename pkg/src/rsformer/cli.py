"""Command-line entry point: ``rsformer <synth|train|eval|infer|profile|ablate>``.

Every subcommand takes ``--config FILE`` (UTF-8 JSON) and repeatable
``--set key=value`` overrides; dotted keys reach nested fields
(``--set model.base_width=16``) and values parse as JSON when they can.
Results go to stdout as JSON, or as aligned text with ``--format text``.  Failures print one JSON line
``{"error": kind, "message": ...}`` to stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, RSFormerError


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path, overrides=()):
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"config {path} is not valid UTF-8 JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        node = data
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object field")
        node[leaf] = _parse_value(value)
    return data


def _emit(args, obj, text=None):
    if args.format == "text" and text is not None:
        print(text)
    else:
        print(json.dumps(obj, indent=2))


def cmd_synth(args, data):
    from .dataset import synthetic_pairs, write_pairs

    opts = {"count": 8, "height": 64, "width": 64, "seed": 0, "split": "train", "rain": True, "snow": True, "flakes": 0.004}
    unknown = set(data) - set(opts)
    if unknown:
        raise ConfigError(f"unknown synth config field(s): {sorted(unknown)}")
    opts.update(data)
    for name in ("count", "seed"):
        if getattr(args, name) is not None:
            opts[name] = getattr(args, name)
    if args.size:
        opts["height"], opts["width"] = args.size
    split = opts.pop("split")
    pairs = synthetic_pairs(**opts)
    manifest = write_pairs(args.out, pairs, split)
    _emit(args, {"manifest": str(manifest.root / "manifest.json"), "pairs": len(manifest), "split": split})


def _train_config(data):
    from .training import TrainConfig

    return TrainConfig.from_dict(data)


def cmd_train(args, data):
    from .training import train

    config = _train_config(data)
    if args.manifest:
        config.train_manifest = args.manifest
    if args.out:
        config.checkpoint_dir = args.out
    if config.checkpoint_dir is None:
        raise ConfigError("checkpoint_dir is not set (use --out or the config)")
    result = train(config)
    _emit(args, {
        "checkpoint": str(result.checkpoint),
        "steps": len(result.log.steps),
        "final_loss": result.log.losses[-1],
        "validations": result.log.validations,
    })


def cmd_eval(args, data):
    from .training import evaluate

    if data:
        raise ConfigError(f"eval takes no config fields, got {sorted(data)}")
    report = evaluate(args.checkpoint, args.manifest)
    _emit(args, report.to_dict(), report.to_table())


def cmd_infer(args, data):
    from .checkpoint import load_checkpoint
    from .dataset import load_image, save_image
    from .network import infer

    if data:
        raise ConfigError(f"infer takes no config fields, got {sorted(data)}")
    model, _ = load_checkpoint(args.checkpoint)
    try:
        image = load_image(args.input)
    except OSError as exc:
        raise ConfigError(f"cannot read image {args.input}: {exc}") from None
    out = save_image(infer(model, image), args.output)
    _emit(args, {"output": str(out), "height": image.shape[2], "width": image.shape[3]})


def cmd_profile(args, data):
    from .network import ModelConfig, build_model, count_parameters
    from .profiling import (
        attention_cost_table,
        count_model_flops,
        format_attention_costs,
        format_breakdown,
        model_cost_breakdown,
        time_inference,
    )

    if args.table1:
        rows = attention_cost_table()
        _emit(args, {name: r.to_dict() for name, r in rows.items()}, format_attention_costs(rows))
        return
    config = ModelConfig.from_dict(data.get("model", data))
    shape = (1, 3, *args.size) if args.size else (1, 3, 256, 256)
    report = count_model_flops(config, shape)
    meta = {"input_shape": list(shape)}
    if args.runs:
        model = build_model(config)
        report.parameters = count_parameters(model)
        report.wall_clock_seconds = time_inference(model, shape, runs=args.runs)
    text = format_breakdown(model_cost_breakdown(config, shape), args.depth)
    _emit(args, {**report.to_dict(), **meta}, text)


def cmd_ablate(args, data):
    from .ablation import ablation_run

    config = _train_config(data)
    if args.manifest:
        config.train_manifest = args.manifest
    table = ablation_run(config, args.axis)
    _emit(args, table.to_dict(), table.to_table())


def build_parser():
    parser = argparse.ArgumentParser(prog="rsformer", description="Rain-by-snow restoration toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="UTF-8 JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
        p.add_argument("--format", choices=["json", "text"], default="json", help="output format (default json)")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "write a synthetic paired dataset")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))

    p = add("train", cmd_train, "train a model")
    p.add_argument("--manifest", help="training manifest (overrides train_manifest)")
    p.add_argument("--out", help="checkpoint directory (overrides checkpoint_dir)")

    p = add("eval", cmd_eval, "score a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)

    p = add("infer", cmd_infer, "restore one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = add("profile", cmd_profile, "analytic operation counts")
    p.add_argument("--table1", action="store_true", help="transposed vs spatial attention cost at n=4096, c=32")
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), help="input size (default 256 256)")
    p.add_argument("--runs", type=int, default=0, help="also time this many inference runs")
    p.add_argument("--depth", type=int, default=1, help="name depth of the text breakdown (default 1)")

    p = add("ablate", cmd_ablate, "train one variant per axis value")
    p.add_argument("--axis", required=True, choices=["token_mixer", "sampling", "loss", "attention_core"])
    p.add_argument("--manifest", help="training manifest (overrides train_manifest)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        data = load_config(args.config, args.set)
        args.func(args, data)
    except RSFormerError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io_error", "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
