"""Keypoints <-> heatmaps: target rendering, OHKM loss, decoding and flip testing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .base import ShapeError

Normalization = Literal["peak", "sum", "raw"]
CompareDomain = Literal["peak", "sum"]
DecodeMode = Literal["global", "neighbor"]

# Quarter-pixel shift toward the second-largest response
DECODE_OFFSET = 0.25


@dataclass
class Pose:
    """K keypoints as rows (x, y, v); v is 0 unlabeled, 1 labeled-invisible, 2 visible."""

    keypoints: np.ndarray
    scores: np.ndarray | None = None
    score: float = 1.0

    def __post_init__(self) -> None:
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3)

    @property
    def K(self) -> int:
        return self.keypoints.shape[0]

    @property
    def xy(self) -> np.ndarray:
        return self.keypoints[:, :2]

    @property
    def visibility(self) -> np.ndarray:
        return self.keypoints[:, 2]

    @classmethod
    def from_flat(cls, values: list[float], score: float = 1.0) -> Pose:
        if len(values) % 3:
            raise ShapeError(f"Keypoint list length {len(values)} is not a multiple of 3")
        return cls(np.asarray(values, dtype=np.float64).reshape(-1, 3), score=score)

    def to_flat(self, with_scores: bool = False) -> list[float]:
        rows = self.keypoints.copy()
        if with_scores and self.scores is not None:
            rows[:, 2] = self.scores
        return [float(v) for v in rows.reshape(-1)]

    def clamp(self, width: int, height: int) -> Pose:
        kp = self.keypoints.copy()
        labeled = kp[:, 2] > 0
        kp[labeled, 0] = np.clip(kp[labeled, 0], 0, width - 1)
        kp[labeled, 1] = np.clip(kp[labeled, 1], 0, height - 1)
        return Pose(kp, self.scores, self.score)


@dataclass
class HeatmapStack:
    """Per-joint maps (n, K, h, w).  ``peak`` maps max out at 1, ``sum`` maps sum to 1."""

    maps: np.ndarray
    normalization: Normalization = "raw"

    @property
    def resolution(self) -> tuple[int, int]:
        return self.maps.shape[2], self.maps.shape[3]

    @property
    def K(self) -> int:
        return self.maps.shape[1]


@dataclass(frozen=True)
class FlipPairs:
    """(left, right) joint index pairs swapped under a horizontal flip."""

    pairs: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for a, b in self.pairs:
            if a == b or a in seen or b in seen:
                raise ValueError(f"Flip pairs must be disjoint: {self.pairs}")
            seen.update((a, b))

    @classmethod
    def from_list(cls, pairs) -> FlipPairs:
        return cls(tuple((int(a), int(b)) for a, b in pairs))

    def permutation(self, K: int) -> np.ndarray:
        perm = np.arange(K)
        for a, b in self.pairs:
            if a >= K or b >= K:
                raise ValueError(f"Flip pair {(a, b)} out of range for K={K}")
            perm[a], perm[b] = b, a
        return perm


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------

def render_targets(
    poses: list[Pose], resolution: tuple[int, int], sigma: float = 1.0,
) -> tuple[HeatmapStack, np.ndarray]:
    """Peak-1 Gaussians centred on the nearest integer pixel; returns (stack, mask (n, K)).

    Unlabeled joints and joints rounding outside the map get an all-zero map and mask 0.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    h, w = resolution
    K = poses[0].K if poses else 0
    maps = np.zeros((len(poses), K, h, w))
    mask = np.zeros((len(poses), K))
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    for n, pose in enumerate(poses):
        if pose.K != K:
            raise ShapeError(f"Pose {n} has {pose.K} joints, expected {K}")
        for k, (x, y, v) in enumerate(pose.keypoints):
            if v <= 0:
                continue
            mx, my = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
            if not (0 <= mx < w and 0 <= my < h):
                continue
            maps[n, k] = np.exp(-((xs - mx) ** 2 + (ys - my) ** 2) / (2.0 * sigma**2))
            mask[n, k] = 1.0
    return HeatmapStack(maps, "peak"), mask


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

@dataclass
class LossResult:
    value: float
    per_joint: np.ndarray
    grad: np.ndarray
    mse: float


def top_r_mean(losses: np.ndarray, R: int) -> float:
    """Mean of the R largest values; ties keep the lower index."""
    order = np.argsort(-np.asarray(losses), kind="stable")
    return float(np.asarray(losses)[order[:R]].mean())


def ohkm_mse_loss(
    pred: HeatmapStack,
    target: HeatmapStack,
    mask: np.ndarray,
    R: int,
    compare: CompareDomain = "peak",
) -> LossResult:
    """Mean of the R largest per-joint MSEs per sample, averaged over the batch.

    Masked joints are excluded and receive zero gradient.  In the peak domain
    sum-normalised predictions are multiplied by the target map's total mass,
    so a prediction equal to the normalised target lands exactly on the
    peak-1 target.  The scale depends only on the target, which keeps the
    rescale linear in the prediction.  In the sum domain targets are
    rescaled to sum 1 instead.
    """
    n, K, h, w = pred.maps.shape
    if target.maps.shape != pred.maps.shape:
        raise ShapeError(f"Prediction {pred.maps.shape} and target {target.maps.shape} differ")
    if not 1 <= R <= K:
        raise ValueError(f"R must be in [1, {K}], got {R}")
    maps = pred.maps
    tmaps = target.maps
    scale = None
    if compare == "peak" and pred.normalization == "sum":
        scale = tmaps.sum(axis=(2, 3), keepdims=True)
        maps = pred.maps * scale
    elif compare == "sum" and target.normalization == "peak":
        totals = tmaps.sum(axis=(2, 3), keepdims=True)
        tmaps = np.divide(tmaps, totals, out=np.zeros_like(tmaps), where=totals > 0)

    diff = maps - tmaps
    per_joint = (diff**2).mean(axis=(2, 3))
    valid = mask > 0
    weights = np.zeros((n, K))
    counted = 0
    total = 0.0
    for i in range(n):
        joints = np.flatnonzero(valid[i])
        if joints.size == 0:
            continue
        order = joints[np.argsort(-per_joint[i, joints], kind="stable")][:R]
        weights[i, order] = 1.0 / order.size
        total += float(per_joint[i, order].mean())
        counted += 1
    if counted == 0:
        return LossResult(0.0, per_joint, np.zeros_like(pred.maps), 0.0)
    weights /= counted
    grad = diff * (2.0 / (h * w)) * weights[:, :, None, None]
    if scale is not None:
        grad = grad * scale
    mse = float(per_joint[valid].mean())
    return LossResult(total / counted, per_joint, grad, mse)


def mse_loss(pred: HeatmapStack, target: HeatmapStack, mask: np.ndarray, compare: CompareDomain = "peak") -> LossResult:
    """Plain masked MSE: OHKM with every joint kept."""
    return ohkm_mse_loss(pred, target, mask, pred.K, compare)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def _second_max(flat_map: np.ndarray, first: int, h: int, w: int, mode: DecodeMode) -> tuple[float, list[int]]:
    if mode == "neighbor":
        y0, x0 = divmod(first, w)
        cand = [
            (y0 + dy) * w + (x0 + dx)
            for dy in (-1, 0, 1) for dx in (-1, 0, 1)
            if (dy or dx) and 0 <= y0 + dy < h and 0 <= x0 + dx < w
        ]
        cand = np.asarray(cand, dtype=np.int64)
    else:
        cand = np.delete(np.arange(flat_map.size), first)
    if cand.size == 0:
        return -np.inf, []
    values = flat_map[cand]
    top = values.max()
    return float(top), [int(i) for i in cand[values == top]]


def decode_heatmaps(pred: HeatmapStack, mode: DecodeMode = "global") -> list[Pose]:
    """Argmax per joint, shifted a quarter pixel toward the second-largest response.

    The shift is skipped when the second-largest value is not unique or equals
    the maximum (flat or perfectly symmetric maps).  Confidence is the peak value.
    """
    if mode not in ("global", "neighbor"):
        raise ValueError(f"Unknown decode mode: {mode!r}")
    n, K, h, w = pred.maps.shape
    poses = []
    for i in range(n):
        kp = np.zeros((K, 3))
        scores = np.zeros(K)
        for k in range(K):
            flat = pred.maps[i, k].reshape(-1)
            first = int(flat.argmax())
            peak = float(flat[first])
            y, x = divmod(first, w)
            fx, fy = float(x), float(y)
            second, where = _second_max(flat, first, h, w, mode)
            if len(where) == 1 and second < peak:
                y2, x2 = divmod(where[0], w)
                fx += DECODE_OFFSET * np.sign(x2 - x)
                fy += DECODE_OFFSET * np.sign(y2 - y)
            kp[k] = (fx, fy, 2.0)
            scores[k] = peak
        poses.append(Pose(kp, scores=scores, score=float(scores.mean()) if K else 0.0))
    return poses


# ---------------------------------------------------------------------------
# Flip test
# ---------------------------------------------------------------------------

def unflip_heatmaps(maps: np.ndarray, pairs: FlipPairs, shift: bool = False) -> np.ndarray:
    """Mirror maps predicted on a flipped input back and swap left/right channels."""
    out = maps[:, pairs.permutation(maps.shape[1]), :, ::-1].copy()
    if shift:
        out[:, :, :, 1:] = out[:, :, :, :-1].copy()
    return out


def flip_average(
    model: Callable[[np.ndarray], HeatmapStack],
    x: np.ndarray,
    pairs: FlipPairs,
    shift: bool = False,
) -> HeatmapStack:
    """Average the prediction on *x* with the un-mirrored prediction on its mirror.

    ``shift`` moves the un-mirrored maps one pixel right before averaging, the
    alignment commonly applied when heatmaps come from a strided encoder.  The
    encoder here is not exactly mirror-equivariant either: strided 3x3 convs on
    even-width maps sample a different pixel grid once mirrored, so even with
    symmetric kernels the two passes differ slightly.  Off by default.
    """
    plain = model(x)
    flipped = model(np.ascontiguousarray(x[..., ::-1]))
    back = unflip_heatmaps(flipped.maps, pairs, shift)
    return HeatmapStack((plain.maps + back) / 2.0, plain.normalization)
