"""Random flip, rotation and scale as one affine warp of image and keypoints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import FlipPairs, Pose
from .tensor import Rng


@dataclass(frozen=True)
class AugmentParams:
    flip_prob: float = 0.5
    scale: tuple[float, float] = (0.7, 1.3)
    rotation: tuple[float, float] = (-40.0, 40.0)


@dataclass(frozen=True)
class Transform:
    flip: bool = False
    scale: float = 1.0
    rotation: float = 0.0  # degrees, counter-clockwise in image coordinates

    @classmethod
    def sample(cls, params: AugmentParams, rng: Rng) -> Transform:
        flip = rng.random() < params.flip_prob
        scale = float(rng.uniform(*params.scale))
        rotation = float(rng.uniform(*params.rotation))
        return cls(flip, scale, rotation)

    def matrix(self, width: int, height: int) -> np.ndarray:
        """3x3 homogeneous map from source pixel coordinates to output coordinates."""
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        t = np.deg2rad(self.rotation)
        cos, sin = np.cos(t) * self.scale, np.sin(t) * self.scale
        to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
        rot = np.array([[cos, -sin, 0], [sin, cos, 0], [0, 0, 1]], dtype=np.float64)
        back = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
        m = back @ rot @ to_origin
        if self.flip:
            m = np.array([[-1, 0, width - 1], [0, 1, 0], [0, 0, 1]], dtype=np.float64) @ m
        return m


def bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample (C, H, W) at float coordinates; taps outside the image read as zero."""
    c, h, w = image.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx, fy = xs - x0, ys - y0
    out = np.zeros((c,) + xs.shape, dtype=image.dtype)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yy, xx = y0 + dy, x0 + dx
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = image[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += (vals * (wy * wx * inside)).astype(image.dtype)
    return out


def warp_image(image: np.ndarray, matrix: np.ndarray, size: tuple[int, int] | None = None) -> np.ndarray:
    """Resample *image* through *matrix*; the output is (C, *size*), default the input size."""
    c, h, w = image.shape
    if size is not None:
        h, w = size
    inv = np.linalg.inv(matrix)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    return bilinear_sample(image, sx, sy)


def warp_pose(pose: Pose, matrix: np.ndarray, width: int, height: int, pairs: FlipPairs | None = None, flip: bool = False) -> Pose:
    kp = pose.keypoints.copy()
    pts = np.c_[kp[:, :2], np.ones(len(kp))] @ matrix.T
    kp[:, :2] = pts[:, :2]
    outside = (kp[:, 0] < 0) | (kp[:, 0] > width - 1) | (kp[:, 1] < 0) | (kp[:, 1] > height - 1)
    kp[outside & (kp[:, 2] > 0), 2] = 0.0
    if flip and pairs is not None:
        kp = kp[pairs.permutation(len(kp))]
    return Pose(kp, pose.scores, pose.score)


def apply_transform(
    image: np.ndarray, pose: Pose, transform: Transform, pairs: FlipPairs | None = None,
) -> tuple[np.ndarray, Pose]:
    c, h, w = image.shape
    m = transform.matrix(w, h)
    if transform == Transform():
        return image.copy(), Pose(pose.keypoints.copy(), pose.scores, pose.score)
    return warp_image(image, m), warp_pose(pose, m, w, h, pairs, transform.flip)


def augment(
    image: np.ndarray,
    pose: Pose,
    params: AugmentParams,
    rng: Rng,
    pairs: FlipPairs | None = None,
) -> tuple[np.ndarray, Pose]:
    """Draw one transform from *params* and apply it to (C, H, W) image and pose alike."""
    return apply_transform(image, pose, Transform.sample(params, rng), pairs)
