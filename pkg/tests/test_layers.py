"""Tests for the differentiable layers."""

import numpy as np
import pytest

from posekit.base import GradTape, ShapeError
from posekit.layers import (
    BatchNormLayer,
    ConvLayer,
    ConvTransposeLayer,
    PoolLayer,
    UpsampleNearest,
    activation,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    conv_transpose2d_forward,
    pool_forward,
    sigmoid,
    spatial_softmax,
)
from posekit.tensor import Rng


def naive_conv(x, w, b, stride, pad):
    """Scalar-loop cross-correlation."""
    n, c, h, wd = x.shape
    oc, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, oc, oh, ow))
    for i in range(n):
        for o in range(oc):
            for y in range(oh):
                for xx in range(ow):
                    patch = xp[i, :, y * stride:y * stride + k, xx * stride:xx * stride + k]
                    out[i, o, y, xx] = (patch * w[o]).sum() + b[o]
    return out


class TestConv:
    @pytest.mark.parametrize("k,stride", [(3, 1), (3, 2), (1, 1), (1, 2)])
    def test_matches_scalar_loop(self, k, stride):
        rng = Rng(0)
        layer = ConvLayer(3, 4, k, rng, stride=stride)
        x = rng.normal(1.0, (2, 3, 7, 6))
        expected = naive_conv(x, layer.weight, layer.bias, stride, k // 2)
        assert np.allclose(layer.forward(x), expected, atol=1e-12)

    def test_grouped_conv_is_block_diagonal(self):
        rng = Rng(1)
        layer = ConvLayer(4, 4, 3, rng, groups=2)
        x = rng.normal(1.0, (1, 4, 5, 5))
        y = layer.forward(x)
        first = naive_conv(x[:, :2], layer.weight[:2], layer.bias[:2], 1, 1)
        assert np.allclose(y[:, :2], first, atol=1e-12)

    def test_shape_preserving_at_stride_one(self):
        layer = ConvLayer(2, 5, 3, Rng(0))
        assert layer.forward(np.zeros((1, 2, 9, 4))).shape == (1, 5, 9, 4)

    def test_rejects_channel_mismatch(self):
        with pytest.raises(ShapeError, match="expects 3 input channels"):
            ConvLayer(3, 4, 3, Rng(0)).forward(np.zeros((1, 2, 4, 4)))

    def test_backward_accumulates_grads(self):
        rng = Rng(2)
        layer = ConvLayer(2, 2, 3, rng)
        x = rng.normal(1.0, (1, 2, 4, 4))
        for _ in range(2):
            tape = GradTape()
            y = layer.forward(x, tape)
            layer.backward(np.ones_like(y), tape)
        _, gw, _ = conv2d_backward(layer, x, np.ones((1, 2, 4, 4)))
        assert np.allclose(layer.params["weight"].grad, 2 * gw)


class TestConvTranspose:
    def test_output_size(self):
        layer = ConvTransposeLayer(3, 2, 4, Rng(0))
        assert layer.forward(np.zeros((1, 3, 8, 6))).shape == (1, 2, 16, 12)

    def test_three_deconvs_upsample_eight_times(self):
        rng = Rng(0)
        x = np.zeros((1, 4, 8, 6))
        for _ in range(3):
            x = ConvTransposeLayer(x.shape[1], 4, 4, rng).forward(x)
        assert x.shape[2:] == (64, 48)

    def test_equals_gradient_of_conv(self):
        """conv_transpose(x; W) is the input gradient of conv(.; W) for grad_out = x."""
        rng = Rng(3)
        for _ in range(5):
            cin, cout = 3, 2
            conv = ConvLayer(cin, cout, 4, rng, stride=2, padding=1)
            conv.params["bias"].value[...] = 0.0
            deconv = ConvTransposeLayer(cout, cin, 4, rng, stride=2, padding=1)
            deconv.params["weight"].value[...] = conv.weight
            deconv.params["bias"].value[...] = 0.0
            x = rng.normal(1.0, (2, cout, 3, 4))
            zero_input = np.zeros((2, cin, 6, 8))
            gx, _, _ = conv2d_backward(conv, zero_input, x)
            assert np.max(np.abs(conv_transpose2d_forward(deconv, x) - gx)) < 1e-10


class TestActivations:
    def test_sigmoid_strictly_inside_unit_interval(self):
        x = np.array([-1000.0, -50.0, 0.0, 50.0, 1000.0])
        y = sigmoid(x)
        assert np.all(y > 0) and np.all(y < 1)
        assert y[2] == 0.5

    def test_sigmoid_float32(self):
        y = sigmoid(np.array([-200.0, 200.0], dtype=np.float32))
        assert y.dtype == np.float32
        assert 0 < y[0] and y[1] < 1


class TestSoftmax:
    def test_maps_sum_to_one(self):
        y = spatial_softmax(Rng(0).normal(5.0, (2, 3, 6, 5)))
        assert np.allclose(y.sum(axis=(2, 3)), 1.0, atol=1e-12)

    def test_constant_input_is_uniform(self):
        y = spatial_softmax(np.full((1, 1, 4, 5), 3.0))
        assert np.allclose(y, 1.0 / 20)

    def test_large_logits_stay_finite(self):
        y = spatial_softmax(np.full((1, 1, 2, 2), 1e4))
        assert np.all(np.isfinite(y))


class TestPool:
    def test_max_and_avg(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        assert pool_forward("max", x).reshape(-1).tolist() == [5.0, 7.0, 13.0, 15.0]
        assert pool_forward("avg", x).reshape(-1).tolist() == [2.5, 4.5, 10.5, 12.5]

    def test_global_kinds_keep_rank(self):
        x = Rng(0).normal(1.0, (2, 3, 4, 5))
        assert pool_forward("global_avg", x).shape == (2, 3, 1, 1)
        assert np.allclose(pool_forward("global_max", x)[..., 0, 0], x.max(axis=(2, 3)))

    def test_max_routes_gradient_to_first_maximum(self):
        layer = PoolLayer("max")
        x = np.ones((1, 1, 2, 2))
        tape = GradTape()
        layer.forward(x, tape)
        g = layer.backward(np.ones((1, 1, 1, 1)), tape)
        assert g.reshape(-1).tolist() == [1.0, 0.0, 0.0, 0.0]


class TestBatchNorm:
    def test_train_mode_normalizes(self):
        bn = BatchNormLayer(3)
        y = bn.forward(Rng(0).normal(4.0, (4, 3, 5, 5)) + 2.0)
        assert np.allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        assert np.allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-3)

    def test_running_stats_update(self):
        bn = BatchNormLayer(1)
        bn.forward(np.full((2, 1, 2, 2), 3.0) + np.arange(8.0).reshape(2, 1, 2, 2))
        assert bn.buffers["running_mean"][0] == pytest.approx(0.1 * 6.5)

    def test_eval_uses_running_stats(self):
        bn = BatchNormLayer(2)
        bn.set_training(False)
        x = Rng(1).normal(1.0, (1, 2, 3, 3))
        assert np.allclose(bn.forward(x), x / np.sqrt(1.0 + bn.eps))

    def test_train_mode_rejects_single_sample(self):
        with pytest.raises(ShapeError, match="batch >= 2"):
            BatchNormLayer(2).forward(np.zeros((1, 2, 3, 3)))


class TestUpsample:
    def test_nearest(self):
        x = np.arange(4.0).reshape(1, 1, 2, 2)
        y = UpsampleNearest(2).forward(x)
        assert y.shape == (1, 1, 4, 4)
        assert y[0, 0, 3, 3] == 3.0 and y[0, 0, 0, 1] == 0.0

    def test_backward_sums_blocks(self):
        layer = UpsampleNearest(2)
        tape = GradTape()
        layer.forward(np.zeros((1, 1, 2, 2)), tape)
        g = layer.backward(np.ones((1, 1, 4, 4)), tape)
        assert np.all(g == 4.0)


class TestGradTape:
    def test_out_of_order_pop_raises(self):
        a, b = ConvLayer(1, 1, 1, Rng(0)), ConvLayer(1, 1, 1, Rng(1))
        tape = GradTape()
        a.forward(np.zeros((1, 1, 2, 2)), tape)
        b.forward(np.zeros((1, 1, 2, 2)), tape)
        with pytest.raises(RuntimeError, match="out of order"):
            a.backward(np.zeros((1, 1, 2, 2)), tape)


class TestFunctionalForms:
    def test_activation_kinds(self):
        x = np.array([-1.0, 0.0, 2.0])
        assert activation("relu", x).tolist() == [0.0, 0.0, 2.0]
        assert activation("sigmoid", np.zeros(1))[0] == 0.5
        with pytest.raises(ValueError, match="Unknown activation"):
            activation("tanh", x)

    def test_conv2d_forward_matches_layer(self):
        layer = ConvLayer(2, 3, 3, Rng(4))
        x = Rng(5).normal(1.0, (1, 2, 5, 5))
        assert np.array_equal(conv2d_forward(layer, x), layer.forward(x))

    def test_batchnorm_forward_eval_uses_running_stats(self):
        layer = BatchNormLayer(2)
        layer.set_training(False)
        x = Rng(6).normal(1.0, (1, 2, 3, 3))
        y, _ = batchnorm_forward(layer, x)
        assert np.allclose(y, x / np.sqrt(1.0 + layer.eps))
