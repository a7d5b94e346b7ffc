"""Tests for heatmap targets, the OHKM loss, decoding and flip testing."""

import numpy as np
import pytest

from posekit.base import ShapeError
from posekit.codec import (
    DECODE_OFFSET,
    FlipPairs,
    HeatmapStack,
    Pose,
    decode_heatmaps,
    flip_average,
    mse_loss,
    ohkm_mse_loss,
    render_targets,
    top_r_mean,
    unflip_heatmaps,
)
from posekit.tensor import Rng


def numeric_grad(fn, maps, eps=1e-6):
    grad = np.zeros_like(maps)
    for idx in np.ndindex(maps.shape):
        old = maps[idx]
        maps[idx] = old + eps
        hi = fn(maps)
        maps[idx] = old - eps
        lo = fn(maps)
        maps[idx] = old
        grad[idx] = (hi - lo) / (2 * eps)
    return grad


class TestPose:
    def test_from_flat(self):
        pose = Pose.from_flat([1, 2, 2, 3, 4, 0])
        assert pose.K == 2
        assert pose.visibility.tolist() == [2.0, 0.0]

    def test_from_flat_rejects_ragged(self):
        with pytest.raises(ShapeError, match="not a multiple of 3"):
            Pose.from_flat([1, 2])

    def test_to_flat_with_scores(self):
        pose = Pose(np.array([[1, 2, 2]]), scores=np.array([0.7]))
        assert pose.to_flat(with_scores=True) == [1.0, 2.0, 0.7]
        assert pose.to_flat() == [1.0, 2.0, 2.0]

    def test_clamp_skips_unlabeled(self):
        pose = Pose(np.array([[-3, 50, 2], [-3, 50, 0]])).clamp(10, 20)
        assert pose.keypoints.tolist() == [[0, 19, 2], [-3, 50, 0]]


class TestFlipPairs:
    def test_permutation(self):
        assert FlipPairs.from_list([[1, 2]]).permutation(4).tolist() == [0, 2, 1, 3]

    def test_rejects_overlap(self):
        with pytest.raises(ValueError, match="disjoint"):
            FlipPairs.from_list([[1, 2], [2, 3]])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="out of range for K=2"):
            FlipPairs.from_list([[0, 3]]).permutation(2)


class TestRenderTargets:
    def test_peak_at_rounded_pixel(self):
        stack, mask = render_targets([Pose(np.array([[3.4, 2.6, 2]]))], (6, 5), sigma=1.0)
        assert stack.normalization == "peak"
        assert np.unravel_index(stack.maps[0, 0].argmax(), (6, 5)) == (3, 3)
        assert stack.maps[0, 0].max() == 1.0
        assert mask.tolist() == [[1.0]]

    def test_unlabeled_and_outside_are_masked(self):
        pose = Pose(np.array([[1, 1, 0], [10, 1, 2], [1, 1, 1]]))
        stack, mask = render_targets([pose], (4, 4))
        assert mask.tolist() == [[0.0, 0.0, 1.0]]
        assert not stack.maps[0, :2].any()

    def test_sigma_controls_spread(self):
        pose = Pose(np.array([[4, 4, 2]]))
        narrow, _ = render_targets([pose], (9, 9), sigma=1.0)
        wide, _ = render_targets([pose], (9, 9), sigma=2.0)
        assert narrow.maps[0, 0, 4, 5] == pytest.approx(np.exp(-0.5))
        assert wide.maps.sum() > narrow.maps.sum()

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError, match="sigma must be positive"):
            render_targets([Pose(np.zeros((1, 3)))], (4, 4), sigma=0.0)

    def test_rejects_mixed_joint_counts(self):
        with pytest.raises(ShapeError, match="expected 2"):
            render_targets([Pose(np.zeros((2, 3))), Pose(np.zeros((3, 3)))], (4, 4))


class TestTopR:
    def test_mean_of_largest(self):
        assert top_r_mean(np.array([1.0, 5.0, 3.0, 4.0]), 2) == 4.5

    def test_ties(self):
        assert top_r_mean(np.array([2.0, 2.0, 2.0]), 2) == 2.0

    def test_non_increasing_in_r(self):
        rng = Rng(4)
        for _ in range(1000):
            losses = rng.uniform(0, 1, 17)
            means = [top_r_mean(losses, R) for R in range(1, 18)]
            assert all(b <= a + 1e-15 for a, b in zip(means, means[1:]))


class TestOhkmLoss:
    def setup_method(self):
        rng = Rng(0)
        self.pred = HeatmapStack(rng.normal(1.0, (2, 3, 4, 4)), "raw")
        self.target = HeatmapStack(rng.uniform(0, 1, (2, 3, 4, 4)), "peak")

    def test_r_out_of_range(self):
        mask = np.ones((2, 3))
        for R in (0, 4):
            with pytest.raises(ValueError, match=r"R must be in \[1, 3\]"):
                ohkm_mse_loss(self.pred, self.target, mask, R)

    def test_keeps_hardest_joints(self):
        mask = np.ones((2, 3))
        result = ohkm_mse_loss(self.pred, self.target, mask, 1)
        assert result.value == pytest.approx(result.per_joint.max(axis=1).mean())

    def test_r_equal_k_is_plain_mse(self):
        mask = np.ones((2, 3))
        full = ohkm_mse_loss(self.pred, self.target, mask, 3)
        assert full.value == pytest.approx(mse_loss(self.pred, self.target, mask).value)
        assert full.value == pytest.approx(full.mse)

    def test_masked_joints_get_no_gradient(self):
        mask = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        result = ohkm_mse_loss(self.pred, self.target, mask, 2)
        assert not result.grad[0, 1].any()
        assert not result.grad[1, :2].any()

    def test_all_masked_is_zero(self):
        result = ohkm_mse_loss(self.pred, self.target, np.zeros((2, 3)), 2)
        assert result.value == 0.0
        assert not result.grad.any()

    def test_gradient_matches_finite_differences(self):
        mask = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
        maps = self.pred.maps.copy()

        def value(m):
            return ohkm_mse_loss(HeatmapStack(m, "raw"), self.target, mask, 2).value

        analytic = ohkm_mse_loss(HeatmapStack(maps, "raw"), self.target, mask, 2).grad
        assert np.allclose(analytic, numeric_grad(value, maps), atol=1e-7)

    def test_sum_maps_rescaled_by_target_mass(self):
        rng = Rng(1)
        raw = rng.uniform(0.1, 1.0, (1, 2, 3, 3))
        maps = raw / raw.sum(axis=(2, 3), keepdims=True)
        target = HeatmapStack(rng.uniform(0, 1, (1, 2, 3, 3)), "peak")
        mask = np.ones((1, 2))

        def value(m):
            return ohkm_mse_loss(HeatmapStack(m, "sum"), target, mask, 2).value

        result = ohkm_mse_loss(HeatmapStack(maps, "sum"), target, mask, 2)
        rescaled = maps * target.maps.sum(axis=(2, 3), keepdims=True)
        assert result.value == pytest.approx(((rescaled - target.maps) ** 2).mean())
        assert np.allclose(result.grad, numeric_grad(value, maps.copy()), atol=1e-6)

    def test_normalised_target_is_a_perfect_sum_prediction(self):
        target, mask = render_targets([Pose(np.array([[5.0, 4.0, 2.0]]))], (9, 11))
        pred = HeatmapStack(target.maps / target.maps.sum(), "sum")
        result = ohkm_mse_loss(pred, target, mask, 1)
        assert result.value == pytest.approx(0.0, abs=1e-20)
        assert np.allclose(result.grad, 0.0)

    def test_misplaced_spike_scores_worse_than_flat_map(self):
        target, mask = render_targets([Pose(np.array([[5.0, 4.0, 2.0]]))], (9, 11))
        flat = HeatmapStack(np.full((1, 1, 9, 11), 1.0 / 99), "sum")
        spike = np.zeros((1, 1, 9, 11))
        spike[0, 0, 0, 0] = 1.0
        flat_loss = ohkm_mse_loss(flat, target, mask, 1)
        spike_loss = ohkm_mse_loss(HeatmapStack(spike, "sum"), target, mask, 1)
        assert spike_loss.value > flat_loss.value
        # the target pixel still pulls the prediction up
        assert spike_loss.grad[0, 0, 4, 5] < 0

    def test_sum_domain_rescales_targets(self):
        maps = np.full((1, 1, 2, 2), 0.25)
        target = HeatmapStack(np.full((1, 1, 2, 2), 1.0), "peak")
        result = ohkm_mse_loss(HeatmapStack(maps, "sum"), target, np.ones((1, 1)), 1, compare="sum")
        assert result.value == pytest.approx(0.0)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ShapeError, match="differ"):
            ohkm_mse_loss(self.pred, HeatmapStack(np.zeros((2, 3, 4, 5))), np.ones((2, 3)), 1)


class TestDecode:
    def test_single_peak_is_exact(self):
        maps = np.zeros((1, 1, 5, 6))
        maps[0, 0, 2, 4] = 1.0
        (pose,) = decode_heatmaps(HeatmapStack(maps))
        assert pose.xy.tolist() == [[4.0, 2.0]]
        assert pose.scores.tolist() == [1.0]

    def test_quarter_shift_toward_second_max(self):
        maps = np.zeros((1, 1, 5, 6))
        maps[0, 0, 2, 4] = 1.0
        maps[0, 0, 3, 5] = 0.5
        (pose,) = decode_heatmaps(HeatmapStack(maps))
        assert pose.xy.tolist() == [[4.0 + DECODE_OFFSET, 2.0 + DECODE_OFFSET]]

    def test_symmetric_gaussian_is_not_shifted(self):
        stack, _ = render_targets([Pose(np.array([[3, 2, 2], [1, 4, 2]]))], (6, 5))
        (pose,) = decode_heatmaps(stack)
        assert pose.xy.tolist() == [[3.0, 2.0], [1.0, 4.0]]
        assert pose.score == 1.0

    def test_render_decode_every_interior_pixel(self):
        h, w = 64, 48
        worst = 0.0
        for y in range(1, h - 1):
            poses = [Pose(np.array([[float(x), float(y), 2.0]])) for x in range(1, w - 1)]
            stack, _ = render_targets(poses, (h, w), sigma=1.0)
            for x, pose in zip(range(1, w - 1), decode_heatmaps(stack)):
                worst = max(worst, float(np.hypot(*(pose.xy[0] - (x, y)))))
        assert worst <= 0.25

    def test_neighbor_mode_ignores_far_responses(self):
        maps = np.zeros((1, 1, 6, 6))
        maps[0, 0, 2, 2] = 1.0
        maps[0, 0, 2, 1] = 0.4
        maps[0, 0, 5, 5] = 0.9
        (near,) = decode_heatmaps(HeatmapStack(maps), mode="neighbor")
        (far,) = decode_heatmaps(HeatmapStack(maps), mode="global")
        assert near.xy.tolist() == [[1.75, 2.0]]
        assert far.xy.tolist() == [[2.25, 2.25]]

    def test_flat_map_decodes_to_origin(self):
        (pose,) = decode_heatmaps(HeatmapStack(np.full((1, 1, 3, 3), 0.1)))
        assert pose.xy.tolist() == [[0.0, 0.0]]

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError, match="Unknown decode mode"):
            decode_heatmaps(HeatmapStack(np.zeros((1, 1, 2, 2))), mode="subpixel")


class TestFlip:
    def test_unflip_twice_is_identity(self):
        maps = Rng(2).normal(1.0, (1, 4, 3, 5))
        pairs = FlipPairs.from_list([[0, 3]])
        assert np.array_equal(unflip_heatmaps(unflip_heatmaps(maps, pairs), pairs), maps)

    def test_unflip_swaps_channels(self):
        maps = np.zeros((1, 2, 1, 3))
        maps[0, 0, 0, 0] = 1.0
        back = unflip_heatmaps(maps, FlipPairs.from_list([[0, 1]]))
        assert back[0, 1, 0, 2] == 1.0

    def test_average_of_equivariant_model_is_unchanged(self):
        pairs = FlipPairs.from_list([[0, 1]])

        ramp = np.arange(1.0, 7.0)

        def model(x):
            # joint 1 is the mirror image of joint 0
            return HeatmapStack(np.concatenate([x * ramp, x * ramp[::-1]], axis=1))

        x = Rng(3).normal(1.0, (1, 1, 4, 6))
        averaged = flip_average(model, x, pairs)
        assert np.allclose(averaged.maps, model(x).maps)
