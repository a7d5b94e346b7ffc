"""Central finite differences against analytic gradients, per layer, block or whole network.

Every case projects its outputs onto fixed random tensors, ``L = sum(P * y)``,
so one backward pass with ``grad = P`` yields dL/dθ for every parameter and
input.  Double precision only.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .base import ComponentRegistry, GradTape, Layer
from .fasm import ChannelSelection, FamBlock, FasmBottleneck, FsmBlock, LocationSelection
from .heads import AuxHead, DepthToSpace, DucHead, SbnHead
from .layers import (
    Activation,
    BatchNormLayer,
    ConvLayer,
    ConvTransposeLayer,
    DenseLayer,
    PoolLayer,
    SpatialSoftmax,
    UpsampleNearest,
)
from .network import EfafNet, FeatureFusion, NetworkConfig
from .tensor import Rng

EPS = 1e-5
THRESHOLD = 1e-4
COMPOSITE_SAMPLES = 16

# Tiny end-to-end network: input 32x24, two stages, K=3
TINY_CONFIG = dict(
    stage_widths=[8, 16], stage_strides=[1, 2], blocks=[1, 1], stem_stride=2,
    s=4, f=4, K=3, precision="f64", deconv_filters=8,
)


@dataclass
class Scenario:
    layer: Layer
    inputs: list[np.ndarray]
    forward: Callable[[list[np.ndarray], GradTape | None], list[np.ndarray]]
    backward: Callable[[list[np.ndarray], GradTape], list[np.ndarray]]


def _single(layer: Layer, x: np.ndarray) -> Scenario:
    return Scenario(
        layer, [x],
        lambda xs, t: [layer.forward(xs[0], t)],
        lambda gs, t: [layer.backward(gs[0], t)],
    )


@dataclass
class GradCase:
    name: str
    group: str
    build: Callable[[Rng], Scenario]
    composite: bool = False

    def can_handle(self, key: str) -> bool:
        return key in (self.name, self.group, "all")


@dataclass
class CaseReport:
    name: str
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


@dataclass
class GradcheckReport:
    scope: str
    threshold: float
    cases: list[CaseReport] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((c.max_error for c in self.cases), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.threshold

    def to_dict(self) -> dict:
        return {
            "scope": self.scope,
            "threshold": self.threshold,
            "max_error": self.max_error,
            "passed": self.passed,
            "cases": {c.name: {"max_error": c.max_error, "tensors": c.errors} for c in self.cases},
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|, 1e-12)."""
    scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def check_scenario(scenario: Scenario, rng: Rng, *, eps: float = EPS, samples: int | None = None) -> dict[str, float]:
    """Relative error per parameter tensor and per input."""
    outs = scenario.forward(scenario.inputs, None)
    proj = [rng.normal(1.0, o.shape) for o in outs]

    def loss() -> float:
        return float(sum((o * p).sum() for o, p in zip(scenario.forward(scenario.inputs, None), proj)))

    scenario.layer.zero_grad()
    tape = GradTape()
    scenario.forward(scenario.inputs, tape)
    grads_in = scenario.backward(proj, tape)
    if len(tape):
        raise RuntimeError(f"{len(tape)} tape records left after backward")

    targets = [(name, p.value, p.grad.copy()) for name, p in scenario.layer.named_parameters()]
    targets += [(f"input{i}", x, g) for i, (x, g) in enumerate(zip(scenario.inputs, grads_in))]
    errors = {}
    for name, array, analytic in targets:
        flat = array.reshape(-1)
        if samples is None or flat.size <= samples:
            idx = np.arange(flat.size)
        else:
            idx = rng.generator.choice(flat.size, samples, replace=False)
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            up = loss()
            flat[i] = old - eps
            down = loss()
            flat[i] = old
            numeric[k] = (up - down) / (2 * eps)
        errors[name] = relative_error(analytic.reshape(-1)[idx], numeric)
    return errors


# ---------------------------------------------------------------------------
# Cases
# ---------------------------------------------------------------------------

def _x(rng: Rng, *shape: int) -> np.ndarray:
    return rng.normal(1.0, shape)


def _ffm(rng: Rng) -> Scenario:
    ffm = FeatureFusion(4, 6, 5, 2, rng)
    low, high = _x(rng, 2, 4, 6, 4), _x(rng, 2, 6, 3, 2)
    return Scenario(ffm, [low, high], lambda xs, t: [ffm.fuse(xs[0], xs[1], t)], lambda gs, t: list(ffm.backward(gs[0], t)))


def _network(rng: Rng) -> Scenario:
    model = EfafNet(NetworkConfig(**TINY_CONFIG), rng)
    model.set_training(True)

    def forward(xs, t):
        art = model.forward(xs[0], t)
        return [art.heatmaps.maps, art.aux_heatmaps.maps]

    return Scenario(model, [_x(rng, 2, 1, 32, 24)], forward, lambda gs, t: [model.backward(gs[0], gs[1], t)])


def _bn_eval(rng: Rng) -> Scenario:
    bn = BatchNormLayer(3)
    bn.buffers["running_mean"][...] = rng.normal(1.0, 3)
    bn.buffers["running_var"][...] = rng.uniform(0.5, 2.0, 3)
    bn.params["gamma"].value[...] = rng.normal(1.0, 3)
    bn.set_training(False)
    return _single(bn, _x(rng, 2, 3, 4, 5))


def build_case_registry() -> ComponentRegistry:
    """All gradient-check cases (order matters: first match wins for single-name lookups)."""
    registry = ComponentRegistry()
    layer_cases = {
        "dense": lambda r: _single(DenseLayer(3, 2, r), _x(r, 2, 3)),
        "conv": lambda r: _single(ConvLayer(3, 4, 3, r), _x(r, 2, 3, 5, 6)),
        "conv-stride2": lambda r: _single(ConvLayer(3, 4, 3, r, stride=2), _x(r, 2, 3, 6, 5)),
        "conv-1x1": lambda r: _single(ConvLayer(4, 2, 1, r), _x(r, 2, 4, 3, 3)),
        "conv-grouped": lambda r: _single(ConvLayer(4, 4, 3, r, groups=2), _x(r, 1, 4, 4, 4)),
        "conv-transpose": lambda r: _single(ConvTransposeLayer(3, 2, 4, r), _x(r, 2, 3, 3, 2)),
        "relu": lambda r: _single(Activation("relu"), _x(r, 2, 3, 4, 4)),
        "sigmoid": lambda r: _single(Activation("sigmoid"), _x(r, 2, 3, 4, 4)),
        "softmax": lambda r: _single(SpatialSoftmax(), _x(r, 2, 3, 4, 5)),
        "max-pool": lambda r: _single(PoolLayer("max"), _x(r, 2, 2, 4, 6)),
        "avg-pool": lambda r: _single(PoolLayer("avg"), _x(r, 2, 2, 4, 6)),
        "global-max-pool": lambda r: _single(PoolLayer("global_max"), _x(r, 2, 3, 4, 5)),
        "global-avg-pool": lambda r: _single(PoolLayer("global_avg"), _x(r, 2, 3, 4, 5)),
        "batchnorm": lambda r: _single(BatchNormLayer(3), _x(r, 2, 3, 4, 5)),
        "batchnorm-eval": _bn_eval,
        "upsample": lambda r: _single(UpsampleNearest(2), _x(r, 2, 3, 3, 2)),
        "depth-to-space": lambda r: _single(DepthToSpace(2), _x(r, 2, 8, 3, 2)),
    }
    for name, build in layer_cases.items():
        registry.register(GradCase(name, "layers", build))

    fasm_cases = {
        "fam": lambda r: _single(FamBlock(8, 8, 8, 4, r), _x(r, 2, 8, 5, 4)),
        "fam-normalized": lambda r: _single(FamBlock(8, 8, 8, 2, r, normalize=True), _x(r, 2, 8, 5, 4)),
        "lss": lambda r: _single(LocationSelection(4, r), _x(r, 2, 4, 5, 4)),
        "cs": lambda r: _single(ChannelSelection(8, r, r_fc=2), _x(r, 2, 8, 4, 3)),
        "fsm": lambda r: _single(FsmBlock(8, r), _x(r, 2, 8, 4, 3)),
        "fsm-serial": lambda r: _single(FsmBlock(8, r, order="cs-lss"), _x(r, 2, 8, 4, 3)),
        "fasm-bottleneck": lambda r: _single(FasmBottleneck(8, 4, 8, r, s=2), _x(r, 2, 8, 6, 4)),
        "fasm-bottleneck-stride2": lambda r: _single(FasmBottleneck(4, 4, 8, r, s=2, stride=2), _x(r, 2, 4, 6, 4)),
        "fasm-bottleneck-conv": lambda r: _single(FasmBottleneck(8, 4, 8, r, s=2, placement="conv"), _x(r, 2, 8, 6, 4)),
    }
    for name, build in fasm_cases.items():
        registry.register(GradCase(name, "fasm", build, composite=True))

    head_cases = {
        "ffm": _ffm,
        "duc": lambda r: _single(DucHead(6, 2, 3, r), _x(r, 2, 6, 3, 2)),
        "sbn": lambda r: _single(SbnHead(6, 4, 3, r, filters=4), _x(r, 2, 6, 3, 2)),
        "aux": lambda r: _single(AuxHead(4, 2, 3, r), _x(r, 2, 4, 3, 2)),
    }
    for name, build in head_cases.items():
        registry.register(GradCase(name, "heads", build, composite=True))

    registry.register(GradCase("end-to-end", "end-to-end", _network, composite=True))
    return registry


def run_gradcheck(
    scope: str, seed: int = 0, *, eps: float = EPS, threshold: float = THRESHOLD,
) -> GradcheckReport:
    """Check every case matching *scope* (a case name, a group, or ``all``)."""
    registry = build_case_registry()
    cases = registry.select(scope)
    if not cases:
        groups = sorted({c.group for c in registry.select("all")})
        raise ValueError(f"Unknown gradcheck scope {scope!r}; groups: {groups}, cases: {registry.names()}")
    report = GradcheckReport(scope, threshold)
    order = registry.names()
    for case in cases:
        rng = Rng(seed, order.index(case.name))
        scenario = case.build(rng.child(0))
        errors = check_scenario(scenario, rng.child(1), eps=eps, samples=COMPOSITE_SAMPLES if case.composite else None)
        report.cases.append(CaseReport(case.name, errors))
        status = "ok" if max(errors.values(), default=0.0) <= threshold else "FAIL"
        print(f"  [Gradcheck] {case.name}: max rel err {max(errors.values(), default=0.0):.2e} {status}", file=sys.stderr)
    return report
