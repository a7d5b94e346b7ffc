#!/usr/bin/env python3
"""posekit command-line interface.

Usage:
    posekit synth --out data/ --count 16 --val-count 8
    posekit train --data data/ --out runs/tiny --hook ./snapshot.py
    posekit gradcheck --scope all
    posekit predict --checkpoint runs/tiny/checkpoint --data data/val --out preds.json --flip
    posekit eval --predictions preds.json --data data/val --out report/
    posekit ablate --suite components --data data/ --out runs/ablation
    posekit dump-attention --checkpoint runs/tiny/checkpoint --data data/val --image-id 0 --out attn/

Exit codes: 0 ok, 1 validation failure, 2 numerical failure (NaN loss, failed gradcheck).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .ablation import SUITES, ablate
from .base import NumericalError
from .config import LoadedConfig, load_config
from .dataset import PoseDataset, load_predictions, save_predictions
from .gradcheck import run_gradcheck
from .hooks import TrainHook, load_hook_from_script, load_hooks_from_config
from .inference import checkpoint_config, dump_attention, evaluate, load_model, predict, write_report
from .synth import SyntheticSpec, synth_splits
from .train import train


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _config(args: argparse.Namespace) -> LoadedConfig:
    overrides = {}
    if getattr(args, "head", None):
        overrides["head"] = args.head
    if getattr(args, "precision", None):
        overrides["precision"] = args.precision
    train_overrides = {}
    if getattr(args, "seed", None) is not None:
        train_overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        train_overrides["epochs"] = args.epochs
    if getattr(args, "max_steps", None) is not None:
        train_overrides["max_steps"] = args.max_steps
    return load_config(args.config, overrides, train_overrides)


def _split(root: Path, name: str) -> Path:
    """``root/name`` when it holds a dataset, else *root* itself."""
    candidate = Path(root) / name
    return candidate if (candidate / "annotations.json").exists() else Path(root)


def _hooks(args: argparse.Namespace, loaded: LoadedConfig) -> list[TrainHook]:
    hooks: list[TrainHook] = [load_hook_from_script(p) for p in args.hooks or []]
    if not args.no_config_hooks:
        hooks.extend(load_hooks_from_config(loaded.path))
    return hooks


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, ensure_ascii=False))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    loaded = _config(args)
    spec = SyntheticSpec(
        height=loaded.train.input_height,
        width=loaded.train.input_width,
        K=loaded.model.K,
        template=args.template,
    )
    paths = synth_splits(spec, args.count, args.val_count, loaded.train.seed, args.out)
    _emit({"success": True, "datasets": {k: str(v.parent) for k, v in paths.items()}})
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    loaded = _config(args)
    dataset = PoseDataset.load(_split(args.data, "train"))
    result = train(loaded.model, loaded.train, dataset, args.out, hooks=_hooks(args, loaded))
    _emit(asdict(result))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.precision == "f32":
        raise ValueError("gradcheck runs in double precision only")
    report = run_gradcheck(args.scope, args.seed or 0)
    _emit(report.to_dict())
    if not report.passed:
        print(f"Error: max relative error {report.max_error:.3e} exceeds {report.threshold}", file=sys.stderr)
        return 2
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    config = _config(args).model if args.config else checkpoint_config(args.checkpoint)
    if args.head or args.precision:
        config = replace(config, **{k: v for k, v in (("head", args.head), ("precision", args.precision)) if v})
    model = load_model(args.checkpoint, config)
    dataset = PoseDataset.load(args.data)
    preds = predict(model, dataset, flip=args.flip or args.flip_shift, shift=args.flip_shift)
    out = Path(args.out)
    path = save_predictions(out / "predictions.json" if out.suffix != ".json" else out, preds)
    _emit({"success": True, "predictions": str(path), "images": len(preds)})
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    dataset = PoseDataset.load(args.data)
    preds = load_predictions(args.predictions)
    report = evaluate(preds, dataset.ground_truths, dataset.meta.oks_params(args.area_source))
    files = write_report(report, args.out)
    print(report.to_table(), file=sys.stderr, end="")
    _emit({**report.to_dict(), "files": files})
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    loaded = _config(args)
    train_set = PoseDataset.load(_split(args.data, "train"))
    eval_set = PoseDataset.load(_split(args.data, "val"))
    report = ablate(args.suite, loaded.model, loaded.train, train_set, eval_set, args.out)
    print(report.to_table(), file=sys.stderr, end="")
    _emit(report.to_dict())
    return 0


def cmd_dump_attention(args: argparse.Namespace) -> int:
    config = _config(args).model if args.config else None
    model = load_model(args.checkpoint, config)
    dataset = PoseDataset.load(args.data)
    index = dump_attention(model, dataset, args.image_id, args.out)
    _emit({"success": True, "index": str(index)})
    return 0


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="posekit: desk-scale EFAFNet pose estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, metavar="FILE", help="TOML config (default: ./.posekit.toml)")
    common.add_argument("--seed", type=int, help="Seed for data, weights and augmentation")
    common.add_argument("--head", choices=["duc", "sbn"], help="Prediction head")
    common.add_argument("--precision", choices=["f32", "f64"], help="Floating point precision")

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic stick-figure dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=16, help="Training samples (default: 16)")
    p.add_argument("--val-count", type=int, default=0, help="Validation samples (default: 0)")
    p.add_argument("--template", choices=["coco17", "stick9"], default="coco17")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="Train a model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--hook", action="append", dest="hooks", metavar="SCRIPT",
                   help="Path to a hook script (can be specified multiple times)")
    p.add_argument("--no-config-hooks", action="store_true", help="Disable hooks from the config file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient check")
    p.add_argument("--scope", default="all", help="Case name, group (layers, fasm, heads, end-to-end) or all")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("predict", parents=[common], help="Predict keypoints for a dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--flip", action="store_true", help="Average with the mirrored prediction")
    p.add_argument("--flip-shift", action="store_true",
                   help="Flip test with the un-mirrored maps shifted one pixel right (implies --flip)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a prediction dump")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--area-source", choices=["annotation", "bbox"], default="annotation")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="Run an ablation suite")
    p.add_argument("--suite", choices=SUITES, default="components")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-attention", parents=[common], help="Write FSM alpha/beta maps for one image")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--image-id", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_dump_attention)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as e:
        where = f" (step {e.step})" if e.step is not None else ""
        print(f"Error: {e}{where}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, KeyError, TypeError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
