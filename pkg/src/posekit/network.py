"""EFAFNet: stem, FASM encoder stages, feature fusion and the prediction head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .base import GradTape, Layer, Sequential, ShapeError
from .codec import HeatmapStack
from .fasm import FSM_ORDERS, PLACEMENTS, FasmBottleneck
from .heads import AuxHead, Head
from .layers import Activation, BatchNormLayer, ConvLayer, UpsampleNearest
from .registry import build_head_registry
from .tensor import DTYPES, Rng, concat_channels

_HEADS = build_head_registry()


@dataclass
class NetworkConfig:
    """Model hyper-parameters.  ``f`` must equal the cumulative stride to the deepest map."""

    stage_widths: list[int] = field(default_factory=lambda: [16, 32, 64])
    stage_strides: list[int] = field(default_factory=lambda: [1, 2, 2])
    blocks: list[int] = field(default_factory=lambda: [1, 1, 1])
    stem_stride: int = 2
    in_channels: int = 1
    s: int = 4
    f: int = 8
    K: int = 17
    head: str = "duc"
    ffm: bool = True
    ffm_feeds_head: bool = True
    aux_weight: float = 0.5
    r_fc: int = 4
    fam: bool = True
    fsm: str = "parallel"
    double_identity: bool = True
    fasm_placement: str = "bottleneck"
    bottleneck_ratio: int = 2
    deconv_filters: int = 256
    precision: str = "f32"

    def __post_init__(self) -> None:
        self.validate()

    @classmethod
    def from_dict(cls, data: dict) -> NetworkConfig:
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ValueError(f"Unknown model config key: {key!r}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        n = len(self.stage_widths)
        if n == 0 or len(self.stage_strides) != n or len(self.blocks) != n:
            raise ValueError(
                f"stage_widths {self.stage_widths}, stage_strides {self.stage_strides} and "
                f"blocks {self.blocks} must be non-empty and of equal length"
            )
        if any(b < 1 for b in self.blocks) or any(st < 1 for st in self.stage_strides) or self.stem_stride < 1:
            raise ValueError(f"Blocks and strides must be >= 1: {self.blocks}, {self.stage_strides}")
        stride = self.stem_stride * int(np.prod(self.stage_strides))
        if self.f != stride:
            raise ValueError(
                f"f={self.f} does not match cumulative stride {stride} "
                f"(stem {self.stem_stride} x stages {self.stage_strides})"
            )
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.fam and self.s < 2:
            raise ValueError(f"FAM needs s >= 2, got {self.s}")
        for width in self.stage_widths:
            mid = width // self.bottleneck_ratio
            if width % self.bottleneck_ratio or mid < 1 or (self.fam and mid % self.s):
                raise ValueError(
                    f"Stage width {width} gives bottleneck width {mid}, "
                    f"not divisible into s={self.s} groups"
                )
        if not _HEADS.select(self.head):
            raise ValueError(f"Unknown head {self.head!r}, expected one of {_HEADS.names()}")
        if self.fsm not in FSM_ORDERS:
            raise ValueError(f"Unknown fsm order {self.fsm!r}, expected one of {FSM_ORDERS}")
        if self.fasm_placement not in PLACEMENTS:
            raise ValueError(f"Unknown fasm_placement {self.fasm_placement!r}, expected one of {PLACEMENTS}")
        if self.precision not in DTYPES:
            raise ValueError(f"Unknown precision {self.precision!r}, expected one of {sorted(DTYPES)}")
        if self.aux_weight < 0:
            raise ValueError(f"aux_weight must be >= 0, got {self.aux_weight}")
        if self.r_fc < 1:
            raise ValueError(f"r_fc must be >= 1, got {self.r_fc}")

    @property
    def dtype(self):
        return DTYPES[self.precision]

    @property
    def low_stride(self) -> int:
        """Stride of the first stage output, the low-level tap."""
        return self.stem_stride * self.stage_strides[0]

    @property
    def head_factor(self) -> int:
        """Upsampling factor of the head: stride of the map it consumes."""
        return self.low_stride if self.ffm and self.ffm_feeds_head else self.f


@dataclass
class ForwardArtifacts:
    heatmaps: HeatmapStack
    aux_heatmaps: HeatmapStack | None
    low: np.ndarray
    high: np.ndarray
    attention: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

class Stage(Layer):
    def __init__(self, blocks: dict[str, FasmBottleneck]) -> None:
        super().__init__()
        self.children = dict(blocks)

    def forward(self, x: np.ndarray, tape: GradTape | None = None, attention: dict | None = None) -> np.ndarray:
        for name, block in self.children.items():
            entry = None
            if attention is not None:
                entry = attention.setdefault(name, {})
            x = block.forward(x, tape, entry)
        return x

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        for block in reversed(self.children.values()):
            grad_out = block.backward(grad_out, tape)
        return grad_out


class Encoder(Layer):
    """3x3 strided stem (BN, ReLU) followed by stages of FASM bottlenecks."""

    def __init__(self, config: NetworkConfig, rng: Rng) -> None:
        super().__init__()
        dtype = config.dtype
        stem_c = config.stage_widths[0]
        self.children["stem"] = Sequential({
            "conv": ConvLayer(config.in_channels, stem_c, 3, rng, stride=config.stem_stride, dtype=dtype),
            "bn": BatchNormLayer(stem_c, dtype=dtype),
            "relu": Activation("relu"),
        })
        in_c = stem_c
        for i, (width, stride, count) in enumerate(zip(config.stage_widths, config.stage_strides, config.blocks)):
            blocks = {}
            for j in range(count):
                blocks[f"block{j + 1}"] = FasmBottleneck(
                    in_c, width // config.bottleneck_ratio, width, rng,
                    s=config.s, stride=stride if j == 0 else 1,
                    fam=config.fam, fsm=config.fsm, r_fc=config.r_fc,
                    double_identity=config.double_identity, placement=config.fasm_placement, dtype=dtype,
                )
                in_c = width
            self.children[f"stage{i + 1}"] = Stage(blocks)
        self.f = config.f

    @property
    def stages(self) -> list[Stage]:
        return [c for name, c in self.children.items() if name.startswith("stage")]

    def run(
        self, x: np.ndarray, tape: GradTape | None = None, attention: dict | None = None,
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Return (deepest map, per-stage outputs)."""
        n, c, h, w = x.shape
        if h % self.f or w % self.f:
            raise ShapeError(f"Input size {h}x{w} not divisible by f={self.f}")
        x = self.children["stem"].forward(x, tape)
        taps = []
        for i, stage in enumerate(self.stages):
            sub = attention.setdefault(f"stage{i + 1}", {}) if attention is not None else None
            x = stage.forward(x, tape, sub)
            taps.append(x)
        return x, taps

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        return self.run(x, tape)[0]

    def backward(
        self, grad_out: np.ndarray, tape: GradTape, tap_grads: dict[int, np.ndarray] | None = None,
    ) -> np.ndarray:
        tap_grads = tap_grads or {}
        g = grad_out
        for i in reversed(range(len(self.stages))):
            if i in tap_grads:
                g = g + tap_grads[i]
            g = self.stages[i].backward(g, tape)
        return self.children["stem"].backward(g, tape)


def encoder_forward(config: NetworkConfig, x: np.ndarray, rng: Rng | None = None) -> tuple[np.ndarray, list[np.ndarray]]:
    """Build a fresh encoder for *config* and run it once in inference mode."""
    encoder = Encoder(config, rng or Rng(0))
    encoder.set_training(False)
    return encoder.run(np.asarray(x, dtype=config.dtype))


# ---------------------------------------------------------------------------
# Feature fusion
# ---------------------------------------------------------------------------

class FeatureFusion(Layer):
    """low -> 1x1 to high width; high -> nearest upsample to low size; concat; 1x1 to out width."""

    def __init__(self, low_c: int, high_c: int, out_c: int, factor: int, rng: Rng, *, dtype=np.float64) -> None:
        super().__init__()
        self.high_c = high_c
        self.children["low_proj"] = ConvLayer(low_c, high_c, 1, rng, dtype=dtype)
        self.children["upsample"] = UpsampleNearest(factor)
        self.children["fuse"] = ConvLayer(2 * high_c, out_c, 1, rng, dtype=dtype)

    def fuse(self, low: np.ndarray, high: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        projected = self.children["low_proj"].forward(low, tape)
        up = self.children["upsample"].forward(high, tape)
        if up.shape[2:] != projected.shape[2:]:
            raise ShapeError(f"Upsampled high map {up.shape} does not match low map {projected.shape}")
        return self.children["fuse"].forward(concat_channels([projected, up]), tape)

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> tuple[np.ndarray, np.ndarray]:
        g = self.children["fuse"].backward(grad_out, tape)
        g_high = self.children["upsample"].backward(g[:, self.high_c:], tape)
        g_low = self.children["low_proj"].backward(np.ascontiguousarray(g[:, :self.high_c]), tape)
        return g_low, g_high


def ffm_fuse(module: FeatureFusion, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    return module.fuse(low, high)


# ---------------------------------------------------------------------------
# Full network
# ---------------------------------------------------------------------------

class EfafNet(Layer):
    """Encoder -> optional FFM -> head, plus an optional auxiliary head.

    Routing: with FFM feeding the head, the head reads the fused map and the
    auxiliary head reads the low tap; otherwise the head reads the deepest map
    and the auxiliary head reads the fused map (FFM on) or the low tap (FFM off).
    """

    def __init__(self, config: NetworkConfig, rng: Rng) -> None:
        super().__init__()
        self.config = config
        dtype = config.dtype
        low_c, high_c = config.stage_widths[0], config.stage_widths[-1]
        self.children["encoder"] = Encoder(config, rng.child(1))
        if config.ffm:
            self.children["ffm"] = FeatureFusion(
                low_c, high_c, high_c, config.f // config.low_stride, rng.child(2), dtype=dtype,
            )
        spec = _HEADS.get(config.head)
        self.children["head"] = spec.build(
            high_c, config.head_factor, config.K, rng.child(3), filters=config.deconv_filters, dtype=dtype,
        )
        if config.aux_weight > 0:
            aux_c = high_c if self._aux_reads_fused else low_c
            self.children["aux"] = AuxHead(aux_c, config.low_stride, config.K, rng.child(4), dtype=dtype)

    @property
    def _aux_reads_fused(self) -> bool:
        return self.config.ffm and not self.config.ffm_feeds_head

    @property
    def head(self) -> Head:
        return self.children["head"]

    def forward(
        self, x: np.ndarray, tape: GradTape | None = None, attention: dict | None = None,
    ) -> ForwardArtifacts:
        x = np.asarray(x, dtype=self.config.dtype)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"Expected input (n, {self.config.in_channels}, H, W), got shape {x.shape}")
        attention = {} if attention is None else attention
        deep, taps = self.children["encoder"].run(x, tape, attention)
        low = taps[0]
        fused = self.children["ffm"].fuse(low, deep, tape) if self.config.ffm else None
        head_in = fused if fused is not None and self.config.ffm_feeds_head else deep
        heatmaps = self.head.predict(head_in, tape)
        aux = None
        if "aux" in self.children:
            aux_in = fused if self._aux_reads_fused else low
            aux = self.children["aux"].predict(aux_in, tape)
        return ForwardArtifacts(heatmaps, aux, low, deep, attention)

    def backward(self, g_maps: np.ndarray, g_aux: np.ndarray | None, tape: GradTape) -> np.ndarray:
        """Backpropagate heatmap gradients; parameter grads accumulate, input grad is returned."""
        g_low = g_deep = g_fused = None
        if "aux" in self.children:
            g = self.children["aux"].backward(g_aux, tape)
            if self._aux_reads_fused:
                g_fused = g
            else:
                g_low = g
        g_head = self.head.backward(g_maps, tape)
        if self.config.ffm and self.config.ffm_feeds_head:
            g_fused = g_head if g_fused is None else g_fused + g_head
        else:
            g_deep = g_head
        if self.config.ffm:
            gl, gh = self.children["ffm"].backward(g_fused, tape)
            g_low = gl if g_low is None else g_low + gl
            g_deep = gh if g_deep is None else g_deep + gh
        taps = {0: g_low} if g_low is not None else {}
        return self.children["encoder"].backward(g_deep, tape, taps)


def build_network(config: NetworkConfig, seed: int = 0) -> EfafNet:
    """Deterministic construction: identical (config, seed) gives identical weights."""
    return EfafNet(config, Rng(seed))


def network_forward(model: EfafNet, x: np.ndarray) -> ForwardArtifacts:
    return model.forward(x)
