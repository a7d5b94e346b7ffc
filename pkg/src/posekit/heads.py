"""Prediction heads: dense upsampling (DUC), deconvolution (SBN) and the auxiliary head."""

from __future__ import annotations

import numpy as np

from .base import GradTape, Layer, Sequential, ShapeError
from .codec import HeatmapStack, Normalization
from .layers import Activation, BatchNormLayer, ConvLayer, ConvTransposeLayer, SpatialSoftmax, UpsampleNearest
from .tensor import Rng, depth_to_space, space_to_depth


class DepthToSpace(Layer):
    def __init__(self, factor: int) -> None:
        super().__init__()
        self.factor = factor

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        if tape is not None:
            tape.push(self)
        return depth_to_space(x, self.factor)

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        tape.pop(self)
        return space_to_depth(grad_out, self.factor)


class Head(Sequential):
    """A Sequential whose output is a heatmap stack of a fixed normalisation."""

    normalization: Normalization = "raw"

    def predict(self, x: np.ndarray, tape: GradTape | None = None) -> HeatmapStack:
        return HeatmapStack(self.forward(x, tape), self.normalization)


class DucHead(Head):
    """1x1 conv to factor²·K channels, depth-to-space, spatial softmax per joint."""

    normalization = "sum"

    def __init__(self, in_c: int, factor: int, K: int, rng: Rng, *, dtype=np.float64) -> None:
        super().__init__({
            "conv": ConvLayer(in_c, factor * factor * K, 1, rng, dtype=dtype),
            "shuffle": DepthToSpace(factor),
            "softmax": SpatialSoftmax(),
        })
        self.factor = factor
        self.K = K


class SbnHead(Head):
    """log2(factor) stride-2 4x4 transposed convs (+BN, ReLU), then a 1x1 conv to K maps."""

    normalization = "raw"

    def __init__(
        self, in_c: int, factor: int, K: int, rng: Rng, *, filters: int = 256, dtype=np.float64,
    ) -> None:
        if factor < 1 or factor & (factor - 1):
            raise ValueError(f"SBN head needs a power-of-two factor, got {factor}")
        layers: dict[str, Layer] = {}
        c = in_c
        for i in range(int(np.log2(factor))):
            layers[f"deconv{i + 1}"] = ConvTransposeLayer(c, filters, 4, rng, stride=2, padding=1, dtype=dtype)
            layers[f"bn{i + 1}"] = BatchNormLayer(filters, dtype=dtype)
            layers[f"relu{i + 1}"] = Activation("relu")
            c = filters
        layers["final"] = ConvLayer(c, K, 1, rng, dtype=dtype)
        super().__init__(layers)
        self.factor = factor
        self.K = K


class AuxHead(Head):
    """1x1 conv to K maps, nearest-upsampled to input resolution."""

    normalization = "raw"

    def __init__(self, in_c: int, factor: int, K: int, rng: Rng, *, dtype=np.float64) -> None:
        super().__init__({
            "conv": ConvLayer(in_c, K, 1, rng, dtype=dtype),
            "upsample": UpsampleNearest(factor),
        })
        self.factor = factor


def duc_head(head: DucHead, x: np.ndarray) -> HeatmapStack:
    if x.shape[1] != head.children["conv"].in_c:
        raise ShapeError(f"DUC head expects {head.children['conv'].in_c} channels, got shape {x.shape}")
    return head.predict(x)


def sbn_deconv_head(head: SbnHead, x: np.ndarray) -> HeatmapStack:
    return head.predict(x)
