"""ReLU and sigmoid."""

from __future__ import annotations

from typing import Literal

import numpy as np

from ..base import GradTape, Layer


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, kept strictly inside (0, 1) even where it saturates."""
    z = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)
    info = np.finfo(x.dtype)
    return np.clip(y, info.tiny, np.nextafter(x.dtype.type(1), x.dtype.type(0)))


def activation(kind: Literal["relu", "sigmoid"], x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"Unknown activation: {kind!r}")


def activation_backward(kind: str, x: np.ndarray, y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return grad_out * (x > 0)
    return grad_out * y * (1.0 - y)


class Activation(Layer):
    def __init__(self, kind: Literal["relu", "sigmoid"]) -> None:
        super().__init__()
        if kind not in ("relu", "sigmoid"):
            raise ValueError(f"Unknown activation: {kind!r}")
        self.kind = kind

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        y = activation(self.kind, x)
        if tape is not None:
            tape.push(self, x, y)
        return y

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        x, y = tape.pop(self)
        return activation_backward(self.kind, x, y, grad_out)
