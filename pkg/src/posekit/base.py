"""Parameters, layer base class, gradient tape, errors and the component registry."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Protocol, runtime_checkable

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes or channel counts do not line up."""


class NumericalError(ArithmeticError):
    """Raised on NaN/Inf values, divergence or failed gradient checks."""

    def __init__(self, message: str, step: int | None = None) -> None:
        super().__init__(message)
        self.step = step


@dataclass
class Param:
    """A learnable tensor and its gradient buffer."""

    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


class GradTape:
    """Ordered record of executed layers and the activations they saved.

    Each layer pushes its saved values during ``forward`` and pops them in
    ``backward``.  Popping verifies ownership, so backward has to walk the
    tape in exactly the reverse execution order.
    """

    def __init__(self) -> None:
        self._records: list[tuple[object, tuple[Any, ...]]] = []

    def push(self, owner: object, *saved: Any) -> None:
        self._records.append((owner, saved))

    def pop(self, owner: object) -> tuple[Any, ...]:
        if not self._records:
            raise RuntimeError(f"Tape is empty, cannot pop for {type(owner).__name__}")
        recorded, saved = self._records.pop()
        if recorded is not owner:
            raise RuntimeError(
                f"Tape consumed out of order: expected {type(recorded).__name__}, "
                f"got {type(owner).__name__}"
            )
        return saved

    def __len__(self) -> int:
        return len(self._records)


class Layer:
    """Base for every differentiable layer and block.

    Subclasses register learnable tensors in ``params``, non-learnable state in
    ``buffers`` and sub-layers in ``children``; naming and traversal are shared.
    """

    def __init__(self) -> None:
        self.params: dict[str, Param] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.children: dict[str, Layer] = {}
        self.training = True

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for name, param in self.params.items():
            yield prefix + name, param
        for child_name, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in self.buffers.items():
            yield prefix + name, buf
        for child_name, child in self.children.items():
            yield from child.named_buffers(f"{prefix}{child_name}.")

    def set_training(self, training: bool) -> None:
        self.training = training
        for child in self.children.values():
            child.set_training(training)

    def zero_grad(self) -> None:
        for _, param in self.named_parameters():
            param.zero_grad()

    def param_count(self) -> int:
        return sum(p.value.size for _, p in self.named_parameters())


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

@runtime_checkable
class Component(Protocol):
    name: str

    def can_handle(self, key: str) -> bool: ...


class ComponentRegistry:
    """Ordered registry of named components.  First match wins."""

    def __init__(self) -> None:
        self._components: list[Component] = []

    def register(self, component: Component) -> None:
        self._components.append(component)

    def get(self, key: str) -> Component:
        for component in self._components:
            if component.can_handle(key):
                return component
        raise ValueError(f"No component for {key!r}")

    def select(self, key: str) -> list[Component]:
        """Return every component that accepts *key*, in registration order."""
        return [c for c in self._components if c.can_handle(key)]

    def names(self) -> list[str]:
        return [c.name for c in self._components]


class Sequential(Layer):
    """Runs child layers in registration order."""

    def __init__(self, layers: dict[str, Layer]) -> None:
        super().__init__()
        self.children = dict(layers)

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        for layer in self.children.values():
            x = layer.forward(x, tape)
        return x

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        for layer in reversed(self.children.values()):
            grad_out = layer.backward(grad_out, tape)
        return grad_out
