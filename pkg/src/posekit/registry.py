"""Default head registry builder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import ComponentRegistry
from .heads import DucHead, Head, SbnHead
from .tensor import Rng


@dataclass
class DucHeadSpec:
    name: str = "duc"

    def can_handle(self, key: str) -> bool:
        return key == "duc"

    def build(self, in_c: int, factor: int, K: int, rng: Rng, *, filters: int, dtype) -> Head:
        return DucHead(in_c, factor, K, rng, dtype=dtype)


@dataclass
class SbnHeadSpec:
    name: str = "sbn"

    def can_handle(self, key: str) -> bool:
        return key in ("sbn", "sbn-deconv")

    def build(self, in_c: int, factor: int, K: int, rng: Rng, *, filters: int, dtype=np.float64) -> Head:
        return SbnHead(in_c, factor, K, rng, filters=filters, dtype=dtype)


def build_head_registry() -> ComponentRegistry:
    """Build registry with all available heads (order matters: first match wins)."""
    registry = ComponentRegistry()
    registry.register(DucHeadSpec())
    registry.register(SbnHeadSpec())
    return registry
