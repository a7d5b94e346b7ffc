"""2D convolution (cross-correlation) and transposed convolution."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..base import GradTape, Layer, Param, ShapeError
from ..tensor import Rng, assert_finite, random_init


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(n, c, H, W) -> (n, c, oh, ow, k, k) strided patch view."""
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


class ConvLayer(Layer):
    """Weight (out_c, in_c/groups, k, k), bias (out_c)."""

    def __init__(
        self,
        in_c: int,
        out_c: int,
        k: int,
        rng: Rng,
        *,
        stride: int = 1,
        padding: int | None = None,
        groups: int = 1,
        dtype=np.float64,
    ) -> None:
        super().__init__()
        if in_c % groups or out_c % groups:
            raise ShapeError(f"in_c={in_c} and out_c={out_c} must be divisible by groups={groups}")
        self.in_c, self.out_c, self.k = in_c, out_c, k
        self.stride = stride
        # 3x3 -> 1, 1x1 -> 0: shape preserving at stride 1
        self.padding = k // 2 if padding is None else padding
        self.groups = groups
        shape = (out_c, in_c // groups, k, k)
        fan = (in_c // groups) * k * k
        self.params["weight"] = Param(random_init(shape, "uniform-fan-in", rng, dtype=dtype))
        self.params["bias"] = Param(random_init((out_c,), "uniform-fan-in", rng, dtype=dtype, fan=fan))

    @property
    def weight(self) -> np.ndarray:
        return self.params["weight"].value

    @property
    def bias(self) -> np.ndarray:
        return self.params["bias"].value

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        p, k, s = self.padding, self.k, self.stride
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        y = conv2d_forward(self, x)
        if tape is not None:
            tape.push(self, x)
        return y

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        (x,) = tape.pop(self)
        gx, gw, gb = conv2d_backward(self, x, grad_out)
        self.params["weight"].grad += gw
        self.params["bias"].grad += gb
        return gx


def conv2d_forward(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    if c != layer.in_c:
        raise ShapeError(f"Conv expects {layer.in_c} input channels, got shape {x.shape}")
    if h + 2 * layer.padding < layer.k or w + 2 * layer.padding < layer.k:
        raise ShapeError(f"Input {x.shape} smaller than kernel {layer.k} under padding {layer.padding}")
    xp = _pad(x, layer.padding)
    cin_g = layer.in_c // layer.groups
    cout_g = layer.out_c // layer.groups
    outs = []
    for g in range(layer.groups):
        win = _windows(xp[:, g * cin_g:(g + 1) * cin_g], layer.k, layer.stride)
        wg = layer.weight[g * cout_g:(g + 1) * cout_g]
        outs.append(np.tensordot(win, wg, axes=([1, 4, 5], [1, 2, 3])))
    y = np.concatenate(outs, axis=3).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y + layer.bias[None, :, None, None])
    return assert_finite(y, "conv2d")


def conv2d_backward(
    layer: ConvLayer, x: np.ndarray, grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (grad_x, grad_weight, grad_bias) for one forward call on *x*."""
    n, _, h, w = x.shape
    oh, ow = layer.output_size(h, w)
    expected = (n, layer.out_c, oh, ow)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    p, k, s = layer.padding, layer.k, layer.stride
    xp = _pad(x, p)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(layer.weight)
    cin_g = layer.in_c // layer.groups
    cout_g = layer.out_c // layer.groups
    for g in range(layer.groups):
        ci = slice(g * cin_g, (g + 1) * cin_g)
        co = slice(g * cout_g, (g + 1) * cout_g)
        go = grad_out[:, co]
        win = _windows(xp[:, ci], k, s)
        gw[co] = np.tensordot(go, win, axes=([0, 2, 3], [0, 2, 3]))
        wg = layer.weight[co]
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(wg[:, :, i, j], go, axes=([0], [1])).transpose(1, 0, 2, 3)
                gxp[:, ci, i:i + s * oh:s, j:j + s * ow:s] += contrib
    gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
    gb = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gx), gw, gb


# ---------------------------------------------------------------------------
# Transposed convolution (SBN baseline head only)
# ---------------------------------------------------------------------------

class ConvTransposeLayer(Layer):
    """Weight (in_c, out_c, k, k); output size (h-1)·stride - 2·padding + k."""

    def __init__(
        self,
        in_c: int,
        out_c: int,
        k: int,
        rng: Rng,
        *,
        stride: int = 2,
        padding: int = 1,
        dtype=np.float64,
    ) -> None:
        super().__init__()
        self.in_c, self.out_c, self.k = in_c, out_c, k
        self.stride, self.padding = stride, padding
        fan = out_c * k * k
        self.params["weight"] = Param(
            random_init((in_c, out_c, k, k), "uniform-fan-in", rng, dtype=dtype, fan=fan)
        )
        self.params["bias"] = Param(random_init((out_c,), "uniform-fan-in", rng, dtype=dtype, fan=fan))

    @property
    def weight(self) -> np.ndarray:
        return self.params["weight"].value

    @property
    def bias(self) -> np.ndarray:
        return self.params["bias"].value

    def forward(self, x: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
        y = conv_transpose2d_forward(self, x)
        if tape is not None:
            tape.push(self, x)
        return y

    def backward(self, grad_out: np.ndarray, tape: GradTape) -> np.ndarray:
        (x,) = tape.pop(self)
        gx, gw, gb = conv_transpose2d_backward(self, x, grad_out)
        self.params["weight"].grad += gw
        self.params["bias"].grad += gb
        return gx


def conv_transpose2d_forward(layer: ConvTransposeLayer, x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    if c != layer.in_c:
        raise ShapeError(f"Transposed conv expects {layer.in_c} channels, got shape {x.shape}")
    k, s, p = layer.k, layer.stride, layer.padding
    hp, wp = (h - 1) * s + k, (w - 1) * s + k
    out = np.zeros((n, layer.out_c, hp, wp), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(x, layer.weight[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            out[:, :, i:i + s * h:s, j:j + s * w:s] += contrib
    out = out[:, :, p:hp - p, p:wp - p] + layer.bias[None, :, None, None]
    return assert_finite(np.ascontiguousarray(out), "conv_transpose2d")


def conv_transpose2d_backward(
    layer: ConvTransposeLayer, x: np.ndarray, grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, _, h, w = x.shape
    k, s, p = layer.k, layer.stride, layer.padding
    expected = (n, layer.out_c, (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    win = _windows(_pad(grad_out, p), k, s)
    gx = np.tensordot(win, layer.weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    gw = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3]))
    gb = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gx), gw, gb
