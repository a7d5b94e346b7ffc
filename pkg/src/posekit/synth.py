"""Synthetic stick-figure dataset: anti-aliased limbs on a noise background.

Each image holds one figure.  Left limbs are drawn brighter than right limbs
so that left/right joints stay distinguishable after a mirror.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blob import save_blob
from .tensor import Rng

# (name, x, y, side) in a unit figure box, y pointing down
COCO17 = (
    ("nose", 0.50, 0.08, "center"),
    ("left_eye", 0.55, 0.05, "left"),
    ("right_eye", 0.45, 0.05, "right"),
    ("left_ear", 0.60, 0.07, "left"),
    ("right_ear", 0.40, 0.07, "right"),
    ("left_shoulder", 0.68, 0.20, "left"),
    ("right_shoulder", 0.32, 0.20, "right"),
    ("left_elbow", 0.78, 0.38, "left"),
    ("right_elbow", 0.22, 0.38, "right"),
    ("left_wrist", 0.82, 0.55, "left"),
    ("right_wrist", 0.18, 0.55, "right"),
    ("left_hip", 0.60, 0.55, "left"),
    ("right_hip", 0.40, 0.55, "right"),
    ("left_knee", 0.62, 0.76, "left"),
    ("right_knee", 0.38, 0.76, "right"),
    ("left_ankle", 0.63, 0.97, "left"),
    ("right_ankle", 0.37, 0.97, "right"),
)
COCO17_LIMBS = (
    (0, 1), (0, 2), (1, 3), (2, 4), (5, 6), (5, 7), (7, 9), (6, 8), (8, 10),
    (5, 11), (6, 12), (11, 12), (11, 13), (13, 15), (12, 14), (14, 16),
)
COCO17_HEAD = (0, 1, 2, 3, 4)

STICK9 = (
    ("head", 0.50, 0.08, "center"),
    ("neck", 0.50, 0.20, "center"),
    ("left_hand", 0.80, 0.50, "left"),
    ("right_hand", 0.20, 0.50, "right"),
    ("pelvis", 0.50, 0.55, "center"),
    ("left_knee", 0.60, 0.76, "left"),
    ("right_knee", 0.40, 0.76, "right"),
    ("left_foot", 0.62, 0.97, "left"),
    ("right_foot", 0.38, 0.97, "right"),
)
STICK9_LIMBS = ((0, 1), (1, 2), (1, 3), (1, 4), (4, 5), (5, 7), (4, 6), (6, 8))
STICK9_HEAD = (0,)

TEMPLATES = {
    "coco17": (COCO17, COCO17_LIMBS, COCO17_HEAD),
    "stick9": (STICK9, STICK9_LIMBS, STICK9_HEAD),
}

INTENSITY = {"left": 1.0, "right": 0.6, "center": 0.8}
KAPPA = float(1.0 / np.sqrt(2.0))


@dataclass(frozen=True)
class SyntheticSpec:
    height: int = 64
    width: int = 48
    K: int = 17
    template: str = "coco17"
    jitter: float = 1.5
    noise: float = 0.1
    occlusion: float = 0.1
    limb_width: float = 1.0
    figure_scale: tuple[float, float] = (0.6, 0.9)

    def __post_init__(self) -> None:
        if self.template not in TEMPLATES:
            raise ValueError(f"Unknown template {self.template!r}, expected one of {sorted(TEMPLATES)}")
        joints = TEMPLATES[self.template][0]
        if not 1 <= self.K <= len(joints):
            raise ValueError(f"K={self.K} out of range for template {self.template!r} ({len(joints)} joints)")

    @property
    def joints(self) -> tuple:
        return TEMPLATES[self.template][0][:self.K]

    @property
    def limbs(self) -> tuple[tuple[int, int], ...]:
        return tuple((a, b) for a, b in TEMPLATES[self.template][1] if a < self.K and b < self.K)

    @property
    def head_joints(self) -> tuple[int, ...]:
        return tuple(j for j in TEMPLATES[self.template][2] if j < self.K) or (0,)

    def flip_pairs(self) -> list[list[int]]:
        names = [j[0] for j in self.joints]
        pairs = []
        for i, name in enumerate(names):
            if name.startswith("left_"):
                other = "right_" + name[len("left_"):]
                if other in names:
                    pairs.append([i, names.index(other)])
        return pairs


def limb_side(a: str, b: str) -> str:
    if a == b:
        return a
    if a == "center":
        return b
    if b == "center":
        return a
    return "center"


def segment_distance(xs: np.ndarray, ys: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distance of every pixel centre to the segment p-q."""
    d = q - p
    length2 = float(d @ d)
    if length2 == 0.0:
        return np.hypot(xs - p[0], ys - p[1])
    t = np.clip(((xs - p[0]) * d[0] + (ys - p[1]) * d[1]) / length2, 0.0, 1.0)
    return np.hypot(xs - (p[0] + t * d[0]), ys - (p[1] + t * d[1]))


def render_figure(spec: SyntheticSpec, keypoints: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Draw limbs whose two end joints are visible; coverage = clip(width + 0.5 - dist, 0, 1)."""
    ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    image = background.copy()
    sides = [j[3] for j in spec.joints]
    for a, b in spec.limbs:
        if keypoints[a, 2] < 2 or keypoints[b, 2] < 2:
            continue
        dist = segment_distance(xs, ys, keypoints[a, :2], keypoints[b, :2])
        coverage = np.clip(spec.limb_width + 0.5 - dist, 0.0, 1.0)
        image = np.maximum(image, coverage * INTENSITY[limb_side(sides[a], sides[b])])
    return image


def sample_figure(spec: SyntheticSpec, rng: Rng) -> tuple[np.ndarray, tuple[float, float, float, float]]:
    """Return keypoints (K, 3) and the figure box (x, y, w, h)."""
    box_h = float(rng.uniform(*spec.figure_scale)) * spec.height
    box_w = min(box_h * 0.5, spec.width * 0.9)
    x0 = float(rng.uniform(0.0, max(spec.width - box_w, 0.0)))
    y0 = float(rng.uniform(0.0, max(spec.height - box_h, 0.0)))
    template = np.array([(j[1], j[2]) for j in spec.joints])
    xy = np.c_[x0 + template[:, 0] * box_w, y0 + template[:, 1] * box_h]
    xy = xy + rng.normal(spec.jitter, xy.shape)
    kp = np.zeros((spec.K, 3))
    kp[:, :2] = xy
    inside = (xy[:, 0] >= 0) & (xy[:, 0] <= spec.width - 1) & (xy[:, 1] >= 0) & (xy[:, 1] <= spec.height - 1)
    kp[:, 2] = np.where(inside, 2.0, 0.0)
    occluded = rng.generator.random(spec.K) < spec.occlusion
    kp[inside & occluded, 2] = 1.0
    return kp, (x0, y0, box_w, box_h)


def head_box(spec: SyntheticSpec, keypoints: np.ndarray, box_h: float) -> list[float]:
    cx, cy = keypoints[list(spec.head_joints), :2].mean(axis=0)
    half = 0.08 * box_h
    return [float(cx - half), float(cy - half), float(cx + half), float(cy + half)]


def synth_generate(spec: SyntheticSpec, count: int, rng: Rng, out_dir: Path) -> Path:
    """Write ``annotations.json`` and ``images/*.tns`` under *out_dir*; deterministic per seed."""
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValueError(f"Cannot write dataset to {out_dir.resolve()}: {exc}") from exc
    images, annotations = [], []
    for idx in range(count):
        sample_rng = rng.child(idx)
        kp, box = sample_figure(spec, sample_rng)
        background = np.zeros((spec.height, spec.width))
        if spec.noise > 0:
            background = sample_rng.uniform(0.0, spec.noise, background.shape)
        image = render_figure(spec, kp, background)
        filename = f"images/{idx:05d}.tns"
        save_blob(out_dir / filename, image.astype(np.float32)[None, None])
        images.append({"id": idx, "width": spec.width, "height": spec.height, "file": filename})
        annotations.append({
            "image_id": idx,
            "keypoints": [float(v) for v in kp.reshape(-1)],
            "bbox": [float(v) for v in box],
            "area": float(box[2] * box[3]),
            "head_box": head_box(spec, kp, box[3]),
        })
    manifest = {
        "images": images,
        "annotations": annotations,
        "meta": {
            "K": spec.K,
            "flip_pairs": spec.flip_pairs(),
            "kappa": [KAPPA] * spec.K,
            "joint_names": [j[0] for j in spec.joints],
            "template": spec.template,
        },
    }
    path = out_dir / "annotations.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"  [Synth] wrote {count} samples to {out_dir}", file=sys.stderr)
    return path


def synth_splits(spec: SyntheticSpec, count: int, val_count: int, seed: int, out_dir: Path) -> dict[str, Path]:
    """Write ``train/`` and ``val/`` datasets from independent streams of *seed*."""
    rng = Rng(seed)
    paths = {"train": synth_generate(spec, count, rng.child(0), Path(out_dir) / "train")}
    if val_count > 0:
        paths["val"] = synth_generate(spec, val_count, rng.child(1), Path(out_dir) / "val")
    return paths
