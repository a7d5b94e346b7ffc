"""Dense rank-4 tensor operations: (batch, channel, height, width), row-major, w fastest.

Tensors are plain ``numpy`` arrays of dtype float32 or float64.  Every function
here is pure: inputs are never written to.
"""

from __future__ import annotations

import os
from typing import Literal

import numpy as np

from .base import NumericalError, ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}

# Per-op finiteness assertion, off unless POSEKIT_DEBUG=1
DEBUG = os.environ.get("POSEKIT_DEBUG", "") == "1"

_OPS = {"add": np.add, "mul": np.multiply, "sub": np.subtract}


class Rng:
    """Seeded PCG64 stream.  Identical seed gives an identical scalar stream."""

    algorithm = "PCG64"

    def __init__(self, seed: int, *stream: int) -> None:
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, *stream: int) -> Rng:
        """Independent stream derived from this seed and *stream* keys."""
        return Rng(self.seed, *self.stream, *stream)

    def uniform(self, low: float, high: float, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, scale: float = 1.0, size=None):
        return self.generator.normal(0.0, scale, size)

    def random(self) -> float:
        return float(self.generator.random())

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size)


def assert_finite(x: np.ndarray, where: str) -> np.ndarray:
    if DEBUG and not np.all(np.isfinite(x)):
        raise NumericalError(f"Non-finite values produced by {where}")
    return x


def _broadcastable(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> bool:
    if len(a_shape) != len(b_shape):
        return False
    return all(bs == as_ or bs == 1 for as_, bs in zip(a_shape, b_shape))


def elementwise(op: Literal["add", "mul", "sub"], a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply *op* with *b* broadcast along its size-1 axes."""
    if op not in _OPS:
        raise ValueError(f"Unknown elementwise op: {op!r}")
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"Cannot broadcast {b.shape} onto {a.shape}")
    return assert_finite(_OPS[op](a, b), op)


def split_channels(x: np.ndarray, s: int) -> list[np.ndarray]:
    c = x.shape[1]
    if s < 1 or c % s:
        raise ShapeError(f"Cannot split {c} channels into {s} groups")
    step = c // s
    return [x[:, i * step:(i + 1) * step].copy() for i in range(s)]


def concat_channels(parts: list[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("Nothing to concatenate")
    n, _, h, w = parts[0].shape
    for part in parts[1:]:
        if (part.shape[0], part.shape[2], part.shape[3]) != (n, h, w):
            raise ShapeError(f"Spatial mismatch: {parts[0].shape} vs {part.shape}")
    return np.concatenate(parts, axis=1)


def depth_to_space(x: np.ndarray, f: int) -> np.ndarray:
    """Rearrange (n, C·f², h, w) into (n, C, h·f, w·f).

    Input channel ``j·f² + dy·f + dx`` lands in output channel ``j`` at offset
    ``(dy, dx)`` of each f×f cell.
    """
    n, c, h, w = x.shape
    if f < 1 or c % (f * f):
        raise ShapeError(f"{c} channels not divisible by f²={f * f}")
    out_c = c // (f * f)
    y = x.reshape(n, out_c, f, f, h, w).transpose(0, 1, 4, 2, 5, 3)
    return y.reshape(n, out_c, h * f, w * f)


def space_to_depth(x: np.ndarray, f: int) -> np.ndarray:
    """Exact inverse of :func:`depth_to_space`."""
    n, c, h, w = x.shape
    if f < 1 or h % f or w % f:
        raise ShapeError(f"Spatial size {(h, w)} not divisible by f={f}")
    y = x.reshape(n, c, h // f, f, w // f, f).transpose(0, 1, 3, 5, 2, 4)
    return y.reshape(n, c * f * f, h // f, w // f)


def fan_in(shape: tuple[int, ...]) -> int:
    if len(shape) < 2:
        return max(int(shape[0]) if shape else 1, 1)
    return int(np.prod(shape[1:]))


def random_init(
    shape: tuple[int, ...],
    scheme: Literal["uniform-fan-in", "constant"],
    rng: Rng,
    *,
    value: float = 0.0,
    dtype=np.float64,
    fan: int | None = None,
) -> np.ndarray:
    """Deterministic initialisation: ``uniform-fan-in`` draws from ±sqrt(1/fan_in)."""
    if scheme == "constant":
        return np.full(shape, value, dtype=dtype)
    if scheme == "uniform-fan-in":
        bound = np.sqrt(1.0 / (fan if fan is not None else fan_in(shape)))
        return rng.uniform(-bound, bound, shape).astype(dtype)
    raise ValueError(f"Unknown init scheme: {scheme!r}")


def worker_count() -> int:
    """Thread cap from POSEKIT_THREADS, else min(4, cpu count)."""
    raw = os.environ.get("POSEKIT_THREADS", "")
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"POSEKIT_THREADS must be an integer, got {raw!r}") from None
        if value < 1:
            raise ValueError(f"POSEKIT_THREADS must be >= 1, got {value}")
        return value
    return min(4, os.cpu_count() or 1)
