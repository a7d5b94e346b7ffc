"""Annotation manifests, image blobs and prediction dumps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import warp_image, warp_pose
from .base import ShapeError
from .blob import load_blob, save_blob
from .codec import FlipPairs, Pose
from .metrics import GroundTruth, OksParams

ANNOTATIONS = "annotations.json"


@dataclass
class DatasetMeta:
    K: int
    flip_pairs: FlipPairs = field(default_factory=FlipPairs)
    kappa: tuple[float, ...] = ()
    joint_names: list[str] = field(default_factory=list)

    def oks_params(self, area_source: str = "annotation") -> OksParams:
        return OksParams(self.kappa or OksParams.uniform(self.K).kappa, area_source)


@dataclass
class Sample:
    image_id: int
    image: np.ndarray  # (C, H, W)
    pose: Pose


class PoseDataset:
    """A directory with ``annotations.json`` and the image blobs it references."""

    def __init__(self, root: Path, manifest: dict) -> None:
        self.root = Path(root)
        try:
            meta = manifest["meta"]
            self.meta = DatasetMeta(
                K=int(meta["K"]),
                flip_pairs=FlipPairs.from_list(meta.get("flip_pairs", [])),
                kappa=tuple(float(k) for k in meta.get("kappa", [])),
                joint_names=list(meta.get("joint_names", [])),
            )
            self.images = {int(img["id"]): img for img in manifest["images"]}
            self.ground_truths: dict[int, list[GroundTruth]] = {i: [] for i in sorted(self.images)}
            for ann in manifest["annotations"]:
                image_id = int(ann["image_id"])
                if image_id not in self.images:
                    raise ValueError(f"Annotation refers to unknown image {image_id}")
                pose = Pose.from_flat(ann["keypoints"])
                if pose.K != self.meta.K:
                    raise ShapeError(f"Annotation for image {image_id} has {pose.K} joints, meta says K={self.meta.K}")
                self.ground_truths[image_id].append(GroundTruth(
                    pose,
                    area=ann.get("area"),
                    bbox=tuple(ann["bbox"]) if "bbox" in ann else None,
                    head_box=tuple(ann["head_box"]) if "head_box" in ann else None,
                ))
        except KeyError as exc:
            raise KeyError(f"Annotation file {self.root / ANNOTATIONS} is missing field {exc}") from None
        if self.meta.kappa and len(self.meta.kappa) != self.meta.K:
            raise ShapeError(f"meta.kappa has {len(self.meta.kappa)} entries, K={self.meta.K}")
        self._index = [(i, j) for i, gts in self.ground_truths.items() for j in range(len(gts))]

    @classmethod
    def load(cls, root: Path) -> PoseDataset:
        path = Path(root) / ANNOTATIONS
        if not path.exists():
            raise FileNotFoundError(f"Annotation file not found: {path.resolve()}")
        return cls(Path(root), json.loads(path.read_text(encoding="utf-8")))

    @property
    def K(self) -> int:
        return self.meta.K

    @property
    def image_ids(self) -> list[int]:
        return sorted(self.images)

    def __len__(self) -> int:
        return len(self._index)

    def image(self, image_id: int) -> np.ndarray:
        """Image as (C, H, W)."""
        array = load_blob(self.root / self.images[image_id]["file"])
        if array.ndim == 4:
            array = array[0]
        elif array.ndim == 2:
            array = array[None]
        return array

    def sample(self, index: int) -> Sample:
        image_id, j = self._index[index]
        return Sample(image_id, self.image(image_id), self.ground_truths[image_id][j].pose)


def resize_dataset(dataset: PoseDataset, height: int, width: int, out_dir: Path) -> PoseDataset:
    """Bilinear-resample every image to height x width and scale annotations to match."""
    out_dir = Path(out_dir)
    images, annotations = [], []
    for image_id in dataset.image_ids:
        image = dataset.image(image_id)
        sy, sx = height / image.shape[1], width / image.shape[2]
        # pixel centres stay aligned: x' = (x + 0.5) * sx - 0.5
        matrix = np.array([[sx, 0.0, 0.5 * sx - 0.5], [0.0, sy, 0.5 * sy - 0.5], [0.0, 0.0, 1.0]])
        resized = warp_image(image, matrix, (height, width))
        filename = f"images/{image_id:05d}.tns"
        save_blob(out_dir / filename, resized.astype(np.float32)[None])
        images.append({"id": image_id, "width": width, "height": height, "file": filename})
        for gt in dataset.ground_truths[image_id]:
            ann = {"image_id": image_id, "keypoints": warp_pose(gt.pose, matrix, width, height).to_flat()}
            if gt.area is not None:
                ann["area"] = float(gt.area) * sx * sy
            if gt.bbox is not None:
                x, y, bw, bh = gt.bbox
                ann["bbox"] = [x * sx, y * sy, bw * sx, bh * sy]
            if gt.head_box is not None:
                x1, y1, x2, y2 = gt.head_box
                ann["head_box"] = [(x1 + 0.5) * sx - 0.5, (y1 + 0.5) * sy - 0.5, (x2 + 0.5) * sx - 0.5, (y2 + 0.5) * sy - 0.5]
            annotations.append(ann)
    meta = dataset.meta
    manifest = {
        "images": images,
        "annotations": annotations,
        "meta": {
            "K": meta.K,
            "flip_pairs": [list(p) for p in meta.flip_pairs.pairs],
            "kappa": list(meta.kappa),
            "joint_names": meta.joint_names,
        },
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / ANNOTATIONS).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return PoseDataset(out_dir, manifest)


def stack_images(images: list[np.ndarray], dtype=np.float64) -> np.ndarray:
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise ShapeError(f"Cannot batch images of different shapes: {sorted(shapes)}")
    return np.stack(images).astype(dtype)


# ---------------------------------------------------------------------------
# Prediction dumps
# ---------------------------------------------------------------------------

def save_predictions(path: Path, predictions: dict[int, list[Pose]]) -> Path:
    """``[{"image_id", "keypoints": [x, y, score] * K, "score"}]`` in image-id order."""
    rows = [
        {"image_id": image_id, "keypoints": pose.to_flat(with_scores=True), "score": float(pose.score)}
        for image_id in sorted(predictions)
        for pose in predictions[image_id]
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return path


def load_predictions(path: Path) -> dict[int, list[Pose]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Prediction file not found: {path.resolve()}")
    out: dict[int, list[Pose]] = {}
    for row in json.loads(path.read_text(encoding="utf-8")):
        flat = np.asarray(row["keypoints"], dtype=np.float64).reshape(-1, 3)
        kp = flat.copy()
        kp[:, 2] = 2.0
        out.setdefault(int(row["image_id"]), []).append(Pose(kp, scores=flat[:, 2], score=float(row["score"])))
    return out
