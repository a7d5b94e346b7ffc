"""Windowed and global max/average pooling."""

from __future__ import annotations

from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..base import GradTape, Layer, ShapeError

PoolKind = Literal["max", "avg", "global_max", "global_avg"]
KINDS = ("max", "avg", "global_max", "global_avg")


def pool_forward(kind: PoolKind, x: np.ndarray, k: int = 2, stride: int | None = None) -> np.ndarray:
    """Global kinds return (n, c, 1, 1); avg divides by the full window size."""
    if kind == "global_avg":
        return x.mean(axis=(2, 3), keepdims=True)
    if kind == "global_max":
        return x.max(axis=(2, 3), keepdims=True)
    if kind not in KINDS:
        raise ValueError(f"Unknown pool kind: {kind!r}")
    stride = stride or k
    if k > x.shape[2] or k > x.shape[3]:
        raise ShapeError(f"Pool window {k} exceeds spatial extent of {x.shape}")
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    if kind == "max":
        return win.max(axis=(4, 5))
    return win.mean(axis=(4, 5))


def pool_backward(
    kind: PoolKind, x: np.ndarray, grad_out: np.ndarray, k: int = 2, stride: int | None = None,
) -> np.ndarray:
    """Max routes the gradient to the first maximum of each window."""
    n, c, h, w = x.shape
    if kind == "global_avg":
        return np.broadcast_to(grad_out / (h * w), x.shape).copy()
    if kind == "global_max":
        flat = x.reshape(n, c, h * w)
        idx = flat.argmax(axis=2)
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[..., None], grad_out.reshape(n, c, 1), axis=2)
        return gx.reshape(x.shape)
    stride = stride or k
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    gx = np.zeros_like(x)
    if kind == "avg":
        share = grad_out / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += share
        return gx
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    arg = win.reshape(n, c, oh, ow, k * k).argmax(axis=4)
    for i in range(k):
        for j in range(k):
            hit = arg == i * k + j
            gx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += grad_out * hit
    return gx


class PoolLayer(Layer):
    def __init__(self, kind: PoolKind, k: int = 2, stride: int | None = None) -> None:
        super().__init__()
        if kind not in KINDS:
            raise ValueError(f"Unknown pool kind: {kind!r}")
        self.kind, self.k, self.stride = kind, k, stride

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        y = pool_forward(self.kind, x, self.k, self.stride)
        if tape is not None:
            tape.push(self, x)
        return y

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        (x,) = tape.pop(self)
        return pool_backward(self.kind, x, grad_out, self.k, self.stride)
