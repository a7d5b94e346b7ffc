"""Differentiable layers, each with a forward and an explicit backward."""

from __future__ import annotations

from .activation import Activation, activation, relu, sigmoid
from .conv import (
    ConvLayer,
    ConvTransposeLayer,
    conv2d_backward,
    conv2d_forward,
    conv_transpose2d_backward,
    conv_transpose2d_forward,
)
from .dense import DenseLayer, dense_backward, dense_forward
from .norm import BatchNormLayer, batchnorm_backward, batchnorm_forward
from .pool import PoolLayer, pool_backward, pool_forward
from .resize import UpsampleNearest, upsample_nearest
from .softmax import SpatialSoftmax, spatial_softmax

__all__ = [
    "Activation",
    "BatchNormLayer",
    "ConvLayer",
    "ConvTransposeLayer",
    "DenseLayer",
    "PoolLayer",
    "SpatialSoftmax",
    "UpsampleNearest",
    "activation",
    "batchnorm_backward",
    "batchnorm_forward",
    "conv2d_backward",
    "conv2d_forward",
    "conv_transpose2d_backward",
    "conv_transpose2d_forward",
    "dense_backward",
    "dense_forward",
    "pool_backward",
    "pool_forward",
    "relu",
    "sigmoid",
    "spatial_softmax",
    "upsample_nearest",
]
