"""Feature aggregation and selection inside residual bottlenecks.

FAM splits the reduced feature map into ``s`` channel groups and runs the
hierarchical recurrence ``y1 = x1``, ``yi = Gi(xi + y(i-1))``.  FSM re-weights
the aggregated features with a channel vector alpha (CS) and a spatial map beta
(LSS), each applied as ``x + w * x``.  The bottleneck combines them as::

    F  = FAM(X)
    Y  = X + (F + alpha*F) + (F + beta*F)
    X~ = relu(X + Y)
"""

from __future__ import annotations

from typing import Literal

import numpy as np

from .base import GradTape, Layer, Sequential, ShapeError
from .layers import Activation, BatchNormLayer, ConvLayer, DenseLayer, PoolLayer
from .tensor import Rng, concat_channels, split_channels

FsmOrder = Literal["parallel", "cs-lss", "lss-cs", "none"]
FSM_ORDERS = ("parallel", "cs-lss", "lss-cs", "none")
Placement = Literal["bottleneck", "conv"]
PLACEMENTS = ("bottleneck", "conv")


def fam_param_count(c: int, s: int) -> int:
    """3x3 weight count of the FAM interior, 1x1 convs excluded."""
    if s < 1 or c % s:
        raise ShapeError(f"{c} channels not divisible by s={s}")
    return (s - 1) * 9 * (c // s) ** 2


# ---------------------------------------------------------------------------
# FAM
# ---------------------------------------------------------------------------

class FamBlock(Layer):
    """pre_conv (1x1) -> split into s -> hierarchical 3x3 convs -> concat -> post_conv (1x1).

    With ``normalize`` the 1x1 convs are followed by batch norm (and ReLU after
    the reduction), and the concatenation gets BN + ReLU; the Gi stay plain
    convolutions so the recurrence holds exactly.
    """

    def __init__(
        self,
        in_c: int,
        width: int,
        out_c: int,
        s: int,
        rng: Rng,
        *,
        stride: int = 1,
        normalize: bool = False,
        dtype=np.float64,
    ) -> None:
        super().__init__()
        if s < 2:
            raise ValueError(f"FAM needs s >= 2, got {s}")
        if width % s:
            raise ShapeError(f"FAM width {width} not divisible by s={s}")
        self.s = s
        self.width = width
        self.normalize = normalize
        split = width // s
        self.children["pre_conv"] = ConvLayer(in_c, width, 1, rng, stride=stride, dtype=dtype)
        if normalize:
            self.children["pre_bn"] = BatchNormLayer(width, dtype=dtype)
            self.children["pre_relu"] = Activation("relu")
        for i in range(2, s + 1):
            self.children[f"g{i}"] = ConvLayer(split, split, 3, rng, dtype=dtype)
        if normalize:
            self.children["mid_bn"] = BatchNormLayer(width, dtype=dtype)
            self.children["mid_relu"] = Activation("relu")
        self.children["post_conv"] = ConvLayer(width, out_c, 1, rng, dtype=dtype)
        if normalize:
            self.children["post_bn"] = BatchNormLayer(out_c, dtype=dtype)

    def _run(self, names: tuple[str, ...], x: np.ndarray, tape: GradTape | None) -> np.ndarray:
        for name in names:
            if name in self.children:
                x = self.children[name].forward(x, tape)
        return x

    def _back(self, names: tuple[str, ...], g: np.ndarray, tape: GradTape) -> np.ndarray:
        for name in reversed(names):
            if name in self.children:
                g = self.children[name].backward(g, tape)
        return g

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        u = self._run(("pre_conv", "pre_bn", "pre_relu"), x, tape)
        xs = split_channels(u, self.s)
        ys = [xs[0]]
        for i in range(2, self.s + 1):
            ys.append(self.children[f"g{i}"].forward(xs[i - 1] + ys[-1], tape))
        return self._run(("mid_bn", "mid_relu", "post_conv", "post_bn"), concat_channels(ys), tape)

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        g = self._back(("mid_bn", "mid_relu", "post_conv", "post_bn"), grad_out, tape)
        gys = split_channels(g, self.s)
        gxs = [None] * self.s
        for i in range(self.s, 1, -1):
            gin = self.children[f"g{i}"].backward(gys[i - 1], tape)
            gxs[i - 1] = gin
            gys[i - 2] = gys[i - 2] + gin
        gxs[0] = gys[0]
        return self._back(("pre_conv", "pre_bn", "pre_relu"), concat_channels(gxs), tape)


class PlainBlock(Sequential):
    """Standard bottleneck interior: 1x1 reduce -> 3x3 -> 1x1 expand, each with BN."""

    def __init__(self, in_c: int, width: int, out_c: int, rng: Rng, *, stride: int = 1, dtype=np.float64) -> None:
        super().__init__({
            "pre_conv": ConvLayer(in_c, width, 1, rng, stride=stride, dtype=dtype),
            "pre_bn": BatchNormLayer(width, dtype=dtype),
            "pre_relu": Activation("relu"),
            "conv": ConvLayer(width, width, 3, rng, dtype=dtype),
            "mid_bn": BatchNormLayer(width, dtype=dtype),
            "mid_relu": Activation("relu"),
            "post_conv": ConvLayer(width, out_c, 1, rng, dtype=dtype),
            "post_bn": BatchNormLayer(out_c, dtype=dtype),
        })


def fam_forward(block: FamBlock, x: np.ndarray) -> np.ndarray:
    return block.forward(x)


# ---------------------------------------------------------------------------
# FSM: location-sensitive and channel-wise selection
# ---------------------------------------------------------------------------

class LocationSelection(Layer):
    """beta = sigmoid(relu(W2(relu(W1(x))))) with W1: C->1 and W2: 1->1; out = x + beta*x."""

    def __init__(self, channels: int, rng: Rng, *, dtype=np.float64) -> None:
        super().__init__()
        self.children["conv1"] = ConvLayer(channels, 1, 1, rng, dtype=dtype)
        self.children["relu1"] = Activation("relu")
        self.children["conv2"] = ConvLayer(1, 1, 1, rng, dtype=dtype)
        self.children["relu2"] = Activation("relu")
        self.children["sigmoid"] = Activation("sigmoid")

    def weights(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        for child in self.children.values():
            x = child.forward(x, tape)
        return x

    def select(self, x: np.ndarray, tape: GradTape | None = None) -> tuple[np.ndarray, np.ndarray]:
        beta = self.weights(x, tape)
        if tape is not None:
            tape.push(self, x, beta)
        return x + beta * x, beta

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        return self.select(x, tape)[0]

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        x, beta = tape.pop(self)
        gx = grad_out * (1.0 + beta)
        g = (grad_out * x).sum(axis=1, keepdims=True)
        for child in reversed(self.children.values()):
            g = child.backward(g, tape)
        return gx + g


class ChannelSelection(Layer):
    """z = gap(x) + gmp(x); alpha = sigmoid(W2(relu(W1(z)))); out = x + alpha*x.

    W1 maps C -> C/r_fc and W2 maps back; r_fc = 1 gives the full C x C layers.
    """

    def __init__(self, channels: int, rng: Rng, *, r_fc: int = 4, dtype=np.float64) -> None:
        super().__init__()
        hidden = max(1, channels // r_fc)
        self.channels = channels
        self.children["avg_pool"] = PoolLayer("global_avg")
        self.children["max_pool"] = PoolLayer("global_max")
        self.children["fc1"] = DenseLayer(channels, hidden, rng, dtype=dtype)
        self.children["relu"] = Activation("relu")
        self.children["fc2"] = DenseLayer(hidden, channels, rng, dtype=dtype)
        self.children["sigmoid"] = Activation("sigmoid")

    def weights(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        n, c = x.shape[:2]
        if c != self.channels:
            raise ShapeError(f"Channel selection expects {self.channels} channels, got shape {x.shape}")
        z = self.children["avg_pool"].forward(x, tape) + self.children["max_pool"].forward(x, tape)
        a = z.reshape(n, c)
        for name in ("fc1", "relu", "fc2", "sigmoid"):
            a = self.children[name].forward(a, tape)
        return a.reshape(n, c, 1, 1)

    def select(self, x: np.ndarray, tape: GradTape | None = None) -> tuple[np.ndarray, np.ndarray]:
        alpha = self.weights(x, tape)
        if tape is not None:
            tape.push(self, x, alpha)
        return x + alpha * x, alpha

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        return self.select(x, tape)[0]

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        x, alpha = tape.pop(self)
        n, c = x.shape[:2]
        gx = grad_out * (1.0 + alpha)
        g = (grad_out * x).sum(axis=(2, 3))
        for name in ("sigmoid", "fc2", "relu", "fc1"):
            g = self.children[name].backward(g, tape)
        gz = g.reshape(n, c, 1, 1)
        gx = gx + self.children["max_pool"].backward(gz, tape)
        return gx + self.children["avg_pool"].backward(gz, tape)


def lss_forward(block: LocationSelection, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return block.select(x)


def cs_forward(block: ChannelSelection, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return block.select(x)


class FsmBlock(Layer):
    """Parallel: (F + alpha*F) + (F + beta*F).  Serial orders compose the two selections."""

    def __init__(self, channels: int, rng: Rng, *, order: FsmOrder = "parallel", r_fc: int = 4, dtype=np.float64) -> None:
        super().__init__()
        if order not in FSM_ORDERS or order == "none":
            raise ValueError(f"Unknown FSM order: {order!r}")
        self.order = order
        self.children["cs"] = ChannelSelection(channels, rng, r_fc=r_fc, dtype=dtype)
        self.children["lss"] = LocationSelection(channels, rng, dtype=dtype)

    def select(
        self, f: np.ndarray, tape: GradTape | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        cs, lss = self.children["cs"], self.children["lss"]
        if self.order == "parallel":
            a, alpha = cs.select(f, tape)
            b, beta = lss.select(f, tape)
            return a + b, alpha, beta
        if self.order == "cs-lss":
            a, alpha = cs.select(f, tape)
            out, beta = lss.select(a, tape)
            return out, alpha, beta
        b, beta = lss.select(f, tape)
        out, alpha = cs.select(b, tape)
        return out, alpha, beta

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        return self.select(x, tape)[0]

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        cs, lss = self.children["cs"], self.children["lss"]
        if self.order == "parallel":
            return lss.backward(grad_out, tape) + cs.backward(grad_out, tape)
        if self.order == "cs-lss":
            return cs.backward(lss.backward(grad_out, tape), tape)
        return lss.backward(cs.backward(grad_out, tape), tape)


# ---------------------------------------------------------------------------
# Bottleneck
# ---------------------------------------------------------------------------

class FasmBottleneck(Layer):
    """Residual bottleneck with FAM interior and FSM before the identity add.

    Stride goes into the 1x1 reduction; a 1x1 projection (+BN) shortcut is used
    whenever stride or width changes.  ``fsm="none"`` gives relu(X + F).

    ``placement="conv"`` moves the selection out of the residual branch onto
    the block output: FSM(relu(X + F)), with a single identity add.
    """

    def __init__(
        self,
        in_c: int,
        width: int,
        out_c: int,
        rng: Rng,
        *,
        s: int = 4,
        stride: int = 1,
        fam: bool = True,
        fsm: FsmOrder = "parallel",
        r_fc: int = 4,
        double_identity: bool = True,
        placement: Placement = "bottleneck",
        dtype=np.float64,
    ) -> None:
        super().__init__()
        if fsm not in FSM_ORDERS:
            raise ValueError(f"Unknown FSM order: {fsm!r}")
        if placement not in PLACEMENTS:
            raise ValueError(f"Unknown FASM placement: {placement!r}")
        self.fsm = fsm
        self.placement = placement
        self.double_identity = double_identity
        if stride != 1 or in_c != out_c:
            self.children["shortcut"] = Sequential({
                "conv": ConvLayer(in_c, out_c, 1, rng, stride=stride, dtype=dtype),
                "bn": BatchNormLayer(out_c, dtype=dtype),
            })
        if fam:
            self.children["body"] = FamBlock(in_c, width, out_c, s, rng, stride=stride, normalize=True, dtype=dtype)
        else:
            self.children["body"] = PlainBlock(in_c, width, out_c, rng, stride=stride, dtype=dtype)
        if fsm != "none":
            self.children["fsm"] = FsmBlock(out_c, rng, order=fsm, r_fc=r_fc, dtype=dtype)

    def forward(
        self, x: np.ndarray, tape: GradTape | None = None, attention: dict | None = None,
    ) -> np.ndarray:
        shortcut = self.children.get("shortcut")
        identity = shortcut.forward(x, tape) if shortcut is not None else x
        f = self.children["body"].forward(x, tape)
        if identity.shape != f.shape:
            raise ShapeError(f"Identity path {identity.shape} does not match residual path {f.shape}")
        if self.fsm == "none" or self.placement == "conv":
            pre = identity + f
        else:
            selected, alpha, beta = self.children["fsm"].select(f, tape)
            if attention is not None:
                attention["alpha"], attention["beta"] = alpha, beta
            y = identity + selected
            pre = identity + y if self.double_identity else y
        if tape is not None:
            tape.push(self, pre)
        out = np.maximum(pre, 0.0)
        if self.fsm != "none" and self.placement == "conv":
            out, alpha, beta = self.children["fsm"].select(out, tape)
            if attention is not None:
                attention["alpha"], attention["beta"] = alpha, beta
        return out

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        conv_fsm = self.fsm != "none" and self.placement == "conv"
        if conv_fsm:
            grad_out = self.children["fsm"].backward(grad_out, tape)
        (pre,) = tape.pop(self)
        g = grad_out * (pre > 0)
        if self.fsm == "none" or conv_fsm:
            g_identity, g_f = g, g
        else:
            g_identity = 2.0 * g if self.double_identity else g
            g_f = self.children["fsm"].backward(g, tape)
        gx = self.children["body"].backward(g_f, tape)
        shortcut = self.children.get("shortcut")
        if shortcut is not None:
            return gx + shortcut.backward(g_identity, tape)
        return gx + g_identity


def fasm_bottleneck_forward(block: FasmBottleneck, x: np.ndarray) -> np.ndarray:
    return block.forward(x)
