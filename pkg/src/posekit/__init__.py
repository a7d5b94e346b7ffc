"""posekit: desk-scale EFAFNet human pose estimation in numpy.

Feature aggregation and selection bottlenecks, feature fusion, a dense
upsampling head, heatmap coding, OKS/PCKh evaluation and a small training
harness, all with explicit forward and backward passes.
"""

from .base import GradTape, Layer, NumericalError, Param, ShapeError
from .codec import FlipPairs, HeatmapStack, Pose
from .network import EfafNet, ForwardArtifacts, NetworkConfig, build_network
from .tensor import Rng

__all__ = [
    "EfafNet",
    "FlipPairs",
    "ForwardArtifacts",
    "GradTape",
    "HeatmapStack",
    "Layer",
    "NetworkConfig",
    "NumericalError",
    "Param",
    "Pose",
    "Rng",
    "ShapeError",
    "build_network",
]
