"""Softmax over all spatial positions of each (batch, channel) map."""

from __future__ import annotations

import numpy as np

from ..base import GradTape, Layer
from ..tensor import assert_finite


def spatial_softmax(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    e = np.exp(flat - flat.max(axis=2, keepdims=True))
    y = e / e.sum(axis=2, keepdims=True)
    return assert_finite(y.reshape(n, c, h, w), "spatial_softmax")


def spatial_softmax_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    dot = (grad_out * y).sum(axis=(2, 3), keepdims=True)
    return y * (grad_out - dot)


class SpatialSoftmax(Layer):
    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        y = spatial_softmax(x)
        if tape is not None:
            tape.push(self, y)
        return y

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        (y,) = tape.pop(self)
        return spatial_softmax_backward(y, grad_out)
