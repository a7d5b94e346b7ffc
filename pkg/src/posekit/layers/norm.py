"""Batch normalisation over (batch, height, width) per channel."""

from __future__ import annotations

import numpy as np

from ..base import GradTape, Layer, Param, ShapeError
from ..tensor import assert_finite


class BatchNormLayer(Layer):
    def __init__(self, channels: int, *, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float64) -> None:
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = Param(np.ones(channels, dtype=dtype))
        self.params["beta"] = Param(np.zeros(channels, dtype=dtype))
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        y, cache = batchnorm_forward(self, x)
        if tape is not None:
            tape.push(self, cache)
        return y

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        (cache,) = tape.pop(self)
        gx, ggamma, gbeta = batchnorm_backward(self, cache, grad_out)
        self.params["gamma"].grad += ggamma
        self.params["beta"].grad += gbeta
        return gx


def batchnorm_forward(layer: BatchNormLayer, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Train mode normalises with batch statistics and updates running stats."""
    n, c, h, w = x.shape
    if c != layer.channels:
        raise ShapeError(f"BatchNorm expects {layer.channels} channels, got shape {x.shape}")
    gamma = layer.params["gamma"].value[None, :, None, None]
    beta = layer.params["beta"].value[None, :, None, None]
    if layer.training:
        if n < 2:
            raise ShapeError(f"BatchNorm in train mode needs batch >= 2, got shape {x.shape}")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = n * h * w
        mom = layer.momentum
        layer.buffers["running_mean"][...] = (1 - mom) * layer.buffers["running_mean"] + mom * mean
        layer.buffers["running_var"][...] = (1 - mom) * layer.buffers["running_var"] + mom * var * m / (m - 1)
    else:
        mean = layer.buffers["running_mean"]
        var = layer.buffers["running_var"]
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma * xhat + beta
    return assert_finite(y, "batchnorm"), (xhat, inv_std, layer.training)


def batchnorm_backward(
    layer: BatchNormLayer, cache: tuple, grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv_std, training = cache
    gamma = layer.params["gamma"].value
    ggamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    gbeta = grad_out.sum(axis=(0, 2, 3))
    gxhat = grad_out * gamma[None, :, None, None]
    scale = inv_std[None, :, None, None]
    if not training:
        return gxhat * scale, ggamma, gbeta
    n, _, h, w = grad_out.shape
    m = n * h * w
    sum_g = gxhat.sum(axis=(0, 2, 3), keepdims=True)
    sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    gx = scale / m * (m * gxhat - sum_g - xhat * sum_gx)
    return gx, ggamma, gbeta
