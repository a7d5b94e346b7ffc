"""OKS similarity, OKS-based AP/AR and PCKh."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .base import ShapeError
from .codec import Pose
from .tensor import worker_count

OKS_THRESHOLDS = tuple(float(t) for t in np.linspace(0.5, 0.95, 10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
MAX_DETS = 20
HEAD_SIZE_FACTOR = 0.6


@dataclass(frozen=True)
class OksParams:
    kappa: tuple[float, ...]
    area_source: Literal["annotation", "bbox"] = "annotation"

    def __post_init__(self) -> None:
        if any(k <= 0 for k in self.kappa):
            raise ValueError(f"OKS kappa constants must be positive: {self.kappa}")

    @classmethod
    def uniform(cls, K: int, value: float = 1.0 / np.sqrt(2.0)) -> OksParams:
        return cls(tuple([value] * K))


@dataclass
class GroundTruth:
    pose: Pose
    area: float | None = None
    bbox: tuple[float, float, float, float] | None = None  # x, y, w, h
    head_box: tuple[float, float, float, float] | None = None  # x1, y1, x2, y2

    def object_area(self, source: str = "annotation") -> float:
        if source == "annotation" and self.area is not None:
            return float(self.area)
        if self.bbox is not None:
            return float(self.bbox[2] * self.bbox[3])
        if self.area is not None:
            return float(self.area)
        xy = self.pose.xy[self.pose.visibility > 0]
        span = xy.max(axis=0) - xy.min(axis=0) if len(xy) else np.zeros(2)
        return float(max(span[0] * span[1], 1.0))

    @property
    def labeled(self) -> bool:
        return bool(np.any(self.pose.visibility > 0))


def oks(pred: Pose, gt: Pose, area: float, params: OksParams) -> float:
    """Mean over labeled gt joints of exp(-d² / (2·area·κ²))."""
    if pred.K != gt.K or len(params.kappa) != gt.K:
        raise ShapeError(f"OKS needs matching K: pred {pred.K}, gt {gt.K}, kappa {len(params.kappa)}")
    labeled = gt.visibility > 0
    if not labeled.any():
        raise ValueError("OKS undefined: ground truth has no labeled keypoints")
    kappa = np.asarray(params.kappa)
    d2 = ((pred.xy - gt.xy) ** 2).sum(axis=1)
    e = d2 / (2.0 * area * kappa**2)
    return float(np.exp(-e[labeled]).mean())


# ---------------------------------------------------------------------------
# AP / AR
# ---------------------------------------------------------------------------

@dataclass
class _ImageEval:
    scores: np.ndarray
    ious: np.ndarray  # (preds, gts)
    n_gt: int


def _evaluate_image(preds: list[Pose], gts: list[GroundTruth], params: OksParams, max_dets: int) -> _ImageEval:
    gts = [g for g in gts if g.labeled]
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)[:max_dets]
    ranked = [preds[i] for i in order]
    ious = np.zeros((len(ranked), len(gts)))
    for j, g in enumerate(gts):
        area = g.object_area(params.area_source)
        for i, p in enumerate(ranked):
            ious[i, j] = oks(p, g.pose, area, params)
    return _ImageEval(np.array([p.score for p in ranked], dtype=np.float64), ious, len(gts))


def _match(ev: _ImageEval, threshold: float) -> np.ndarray:
    """Greedy matching in score order; each prediction takes the best unmatched gt with OKS >= threshold."""
    taken = np.zeros(ev.n_gt, dtype=bool)
    tp = np.zeros(len(ev.scores), dtype=bool)
    for i in range(len(ev.scores)):
        best, best_j = threshold, -1
        for j in range(ev.n_gt):
            if taken[j] or ev.ious[i, j] < best:
                continue
            if best_j < 0 or ev.ious[i, j] > best:
                best, best_j = ev.ious[i, j], j
        if best_j >= 0:
            taken[best_j] = True
            tp[i] = True
    return tp


def precision_recall(scores: np.ndarray, tp: np.ndarray, n_gt: int) -> tuple[float, float]:
    """101-point interpolated AP and final recall for one threshold."""
    if n_gt == 0 or len(scores) == 0:
        return 0.0, 0.0
    order = np.argsort(-scores, kind="mergesort")
    hits = tp[order]
    tps = np.cumsum(hits).astype(np.float64)
    fps = np.cumsum(~hits).astype(np.float64)
    recall = tps / n_gt
    precision = tps / (tps + fps)
    for i in range(len(precision) - 1, 0, -1):
        if precision[i] > precision[i - 1]:
            precision[i - 1] = precision[i]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.array([precision[i] if i < len(precision) else 0.0 for i in idx])
    return float(q.mean()), float(recall[-1])


def oks_ap(
    preds: dict[int, list[Pose]],
    gts: dict[int, list[GroundTruth]],
    params: OksParams,
    thresholds: tuple[float, ...] = OKS_THRESHOLDS,
    max_dets: int = MAX_DETS,
) -> tuple[dict[float, float], dict[float, float]]:
    """Return (AP per threshold, AR per threshold) over all images, reduced in image-id order."""
    image_ids = sorted(set(gts) | set(preds))
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        evals = list(pool.map(
            lambda i: _evaluate_image(preds.get(i, []), gts.get(i, []), params, max_dets), image_ids,
        ))
    n_gt = sum(ev.n_gt for ev in evals)
    scores = np.concatenate([ev.scores for ev in evals]) if evals else np.zeros(0)
    ap, ar = {}, {}
    for t in thresholds:
        tp = np.concatenate([_match(ev, t) for ev in evals]) if evals else np.zeros(0, dtype=bool)
        ap[t], ar[t] = precision_recall(scores, tp, n_gt)
    return ap, ar


# ---------------------------------------------------------------------------
# PCKh
# ---------------------------------------------------------------------------

def head_size(head_box: tuple[float, float, float, float], factor: float = HEAD_SIZE_FACTOR) -> float:
    x1, y1, x2, y2 = head_box
    return factor * float(np.hypot(x2 - x1, y2 - y1))


def pckh(
    preds: dict[int, list[Pose]],
    gts: dict[int, list[GroundTruth]],
    params: OksParams,
    alpha: float = 0.5,
    factor: float = HEAD_SIZE_FACTOR,
) -> tuple[np.ndarray, float]:
    """Per-joint and total fraction of labeled joints within alpha·head size (boundary counts).

    Each ground truth is scored against the prediction of its image with the
    highest OKS; images without predictions count every joint as missed.
    """
    K = len(params.kappa)
    correct = np.zeros(K)
    labeled = np.zeros(K)
    for image_id in sorted(gts):
        candidates = preds.get(image_id, [])
        for g in gts[image_id]:
            if g.head_box is None:
                raise ValueError(f"PCKh needs a head_box for every ground truth (image {image_id})")
            mask = g.pose.visibility > 0
            labeled += mask
            if not candidates or not mask.any():
                continue
            area = g.object_area(params.area_source)
            best = max(candidates, key=lambda p: oks(p, g.pose, area, params))
            d = np.hypot(*(best.xy - g.pose.xy).T)
            correct += mask & (d <= alpha * head_size(g.head_box, factor))
    per_joint = np.divide(correct, labeled, out=np.zeros(K), where=labeled > 0)
    total = float(correct.sum() / labeled.sum()) if labeled.sum() else 0.0
    return per_joint, total


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    ap: dict[float, float]
    ar: dict[float, float]
    pckh_joints: list[float] | None = None
    pckh_total: float | None = None
    max_dets: int = MAX_DETS
    extra: dict = field(default_factory=dict)

    @property
    def mean_ap(self) -> float:
        return float(np.mean(list(self.ap.values()))) if self.ap else 0.0

    @property
    def mean_ar(self) -> float:
        return float(np.mean(list(self.ar.values()))) if self.ar else 0.0

    def _at(self, table: dict[float, float], t: float) -> float:
        for key, value in table.items():
            if abs(key - t) < 1e-9:
                return value
        return 0.0

    def to_dict(self) -> dict:
        return {
            "AP": self.mean_ap,
            "AP.5": self._at(self.ap, 0.5),
            "AP.75": self._at(self.ap, 0.75),
            "AR": self.mean_ar,
            "AR.5": self._at(self.ar, 0.5),
            "AR.75": self._at(self.ar, 0.75),
            "AP_per_threshold": {f"{t:.2f}": v for t, v in self.ap.items()},
            "AR_per_threshold": {f"{t:.2f}": v for t, v in self.ar.items()},
            "PCKh@0.5": self.pckh_total,
            "PCKh@0.5_per_joint": self.pckh_joints,
            "max_dets": self.max_dets,
            **self.extra,
        }

    def to_table(self) -> str:
        """Aligned plain-text table, three decimals."""
        d = self.to_dict()
        cols = ["AP", "AP.5", "AP.75", "AR", "AR.5", "AR.75", "PCKh@0.5"]
        lines = [
            f"# OKS thresholds 0.50:0.05:0.95, maxDets={self.max_dets}; AR = recall at maxDets",
            " ".join(f"{c:>8}" for c in cols),
            " ".join(f"{'-':>8}" if d[c] is None else f"{d[c]:>8.3f}" for c in cols),
        ]
        if self.pckh_joints is not None:
            lines.append("# PCKh@0.5 per joint")
            lines.append(" ".join(f"{v:.3f}" for v in self.pckh_joints))
        return "\n".join(lines) + "\n"


def build_report(
    preds: dict[int, list[Pose]],
    gts: dict[int, list[GroundTruth]],
    params: OksParams,
) -> EvalReport:
    """AP/AR always; PCKh when every ground truth carries a head box."""
    ap, ar = oks_ap(preds, gts, params)
    report = EvalReport(ap, ar)
    all_gts = [g for items in gts.values() for g in items]
    if all_gts and all(g.head_box is not None for g in all_gts):
        joints, total = pckh(preds, gts, params)
        report.pckh_joints = [float(v) for v in joints]
        report.pckh_total = total
    return report


def mean_keypoint_error(preds: dict[int, list[Pose]], gts: dict[int, list[GroundTruth]]) -> float:
    """Mean pixel distance over labeled joints, first prediction against first ground truth per image."""
    dists = []
    for image_id in sorted(gts):
        if not gts[image_id] or not preds.get(image_id):
            continue
        gt, pred = gts[image_id][0].pose, preds[image_id][0]
        mask = gt.visibility > 0
        dists.extend(np.hypot(*(pred.xy[mask] - gt.xy[mask]).T).tolist())
    return float(np.mean(dists)) if dists else float("nan")
