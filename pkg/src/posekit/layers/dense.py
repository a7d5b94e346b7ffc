"""Fully-connected layer."""

from __future__ import annotations

import numpy as np

from ..base import GradTape, Layer, Param, ShapeError
from ..tensor import Rng, assert_finite, random_init


class DenseLayer(Layer):
    """Weight (out_features, in_features), bias (out_features).  Input (n, in_features)."""

    def __init__(self, in_features: int, out_features: int, rng: Rng, *, dtype=np.float64) -> None:
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = Param(
            random_init((out_features, in_features), "uniform-fan-in", rng, dtype=dtype)
        )
        self.params["bias"] = Param(
            random_init((out_features,), "uniform-fan-in", rng, dtype=dtype, fan=in_features)
        )

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        y = dense_forward(self, x)
        if tape is not None:
            tape.push(self, x)
        return y

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        (x,) = tape.pop(self)
        gx, gw, gb = dense_backward(self, x, grad_out)
        self.params["weight"].grad += gw
        self.params["bias"].grad += gb
        return gx


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.in_features:
        raise ShapeError(f"Dense expects (n, {layer.in_features}), got {x.shape}")
    w = layer.params["weight"].value
    b = layer.params["bias"].value
    return assert_finite(x @ w.T + b, "dense")


def dense_backward(
    layer: DenseLayer, x: np.ndarray, grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if grad_out.shape != (x.shape[0], layer.out_features):
        raise ShapeError(f"grad_out shape {grad_out.shape} != ({x.shape[0]}, {layer.out_features})")
    w = layer.params["weight"].value
    return grad_out @ w, grad_out.T @ x, grad_out.sum(axis=0)
