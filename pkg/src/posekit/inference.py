"""Checkpoint loading, prediction, evaluation and attention dumps."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .blob import load_checkpoint, read_manifest, save_blob
from .codec import DecodeMode, HeatmapStack, Pose, decode_heatmaps, flip_average
from .dataset import PoseDataset
from .metrics import EvalReport, GroundTruth, OksParams, build_report
from .network import EfafNet, NetworkConfig, build_network

PREDICT_BATCH = 16


def checkpoint_config(ckpt_dir: Path) -> NetworkConfig:
    """Model config stored in a checkpoint manifest."""
    stored = read_manifest(ckpt_dir).get("config", {})
    model = stored.get("model", stored)
    if not model:
        raise ValueError(f"Checkpoint {ckpt_dir} carries no model config; pass --config")
    return NetworkConfig.from_dict(model)


def load_model(ckpt_dir: Path, config: NetworkConfig | None = None) -> EfafNet:
    """Build the network for *config* (default: the stored one) and load weights in eval mode.

    A config that disagrees with the checkpoint raises ShapeError with the tensor diff.
    """
    config = config or checkpoint_config(ckpt_dir)
    model = build_network(config)
    load_checkpoint(model, ckpt_dir)
    model.set_training(False)
    return model


def _heatmaps(model: EfafNet, x: np.ndarray) -> HeatmapStack:
    return model.forward(x).heatmaps


def predict(
    model: EfafNet,
    dataset: PoseDataset,
    flip: bool = False,
    mode: DecodeMode = "global",
    shift: bool = False,
) -> dict[int, list[Pose]]:
    """One decoded pose per image, coordinates clamped to the image."""
    model.set_training(False)
    out: dict[int, list[Pose]] = {}
    ids = dataset.image_ids
    for start in range(0, len(ids), PREDICT_BATCH):
        chunk = ids[start:start + PREDICT_BATCH]
        x = np.stack([dataset.image(i) for i in chunk])
        if flip:
            stack = flip_average(lambda v: _heatmaps(model, v), x, dataset.meta.flip_pairs, shift)
        else:
            stack = _heatmaps(model, x)
        for image_id, pose in zip(chunk, decode_heatmaps(stack, mode)):
            h, w = x.shape[2:]
            out[image_id] = [pose.clamp(w, h)]
    tag = " (flip, shifted)" if flip and shift else " (flip)" if flip else ""
    print(f"  [Predict] {len(out)} images{tag}", file=sys.stderr)
    return out


def evaluate(
    predictions: dict[int, list[Pose]],
    ground_truths: dict[int, list[GroundTruth]],
    params: OksParams,
) -> EvalReport:
    K = len(params.kappa)
    for image_id, poses in predictions.items():
        for pose in poses:
            if pose.K != K:
                raise ValueError(f"Prediction for image {image_id} has K={pose.K}, annotations have K={K}")
    return build_report(predictions, ground_truths, params)


def write_report(report: EvalReport, out_dir: Path) -> dict[str, str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    text_path = out_dir / "report.txt"
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    text_path.write_text(report.to_table(), encoding="utf-8")
    return {"json": str(json_path), "text": str(text_path)}


def dump_attention(model: EfafNet, dataset: PoseDataset, image_id: int, out_dir: Path) -> Path:
    """Write alpha (n, c, 1, 1) and beta (n, 1, h, w) of every bottleneck for one image."""
    if image_id not in dataset.images:
        raise ValueError(f"Image {image_id} not in dataset (ids {dataset.image_ids[:5]}...)")
    model.set_training(False)
    attention: dict = {}
    model.forward(dataset.image(image_id)[None], attention=attention)
    out_dir = Path(out_dir)
    entries = []
    for stage, blocks in attention.items():
        for block, maps in blocks.items():
            entry = {"block": f"{stage}.{block}"}
            for key in ("alpha", "beta"):
                if key in maps:
                    filename = f"{stage}.{block}.{key}.tns"
                    save_blob(out_dir / filename, maps[key])
                    entry[key] = {"file": filename, "shape": list(maps[key].shape)}
            entries.append(entry)
    index = out_dir / "attention.json"
    index.write_text(json.dumps({"image_id": image_id, "blocks": entries}, indent=2) + "\n", encoding="utf-8")
    print(f"  [Attention] {len(entries)} blocks written to {out_dir}", file=sys.stderr)
    return index
