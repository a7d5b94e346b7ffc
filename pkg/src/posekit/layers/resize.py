"""Nearest-neighbour upsampling by an integer factor."""

from __future__ import annotations

import numpy as np

from ..base import GradTape, Layer


def upsample_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return x
    return x.repeat(factor, axis=2).repeat(factor, axis=3)


def upsample_nearest_backward(grad_out: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return grad_out
    n, c, h, w = grad_out.shape
    return grad_out.reshape(n, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))


class UpsampleNearest(Layer):
    def __init__(self, factor: int) -> None:
        super().__init__()
        self.factor = factor

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        if tape is not None:
            tape.push(self)
        return upsample_nearest(x, self.factor)

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        tape.pop(self)
        return upsample_nearest_backward(grad_out, self.factor)
