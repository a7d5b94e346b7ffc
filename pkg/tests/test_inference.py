"""Tests for prediction, evaluation and attention dumps."""

import json

import numpy as np
import pytest

from posekit.blob import load_blob, save_checkpoint
from posekit.codec import FlipPairs, Pose, flip_average
from posekit.dataset import PoseDataset
from posekit.inference import checkpoint_config, dump_attention, evaluate, load_model, predict, write_report
from posekit.metrics import GroundTruth, OksParams
from posekit.network import NetworkConfig, build_network
from posekit.tensor import Rng

from .conftest import TINY_MODEL


@pytest.fixture
def val_set(tiny_data):
    return PoseDataset.load(tiny_data / "val")


class TestPredict:
    def test_one_pose_per_image_inside_frame(self, tiny_config, val_set):
        preds = predict(build_network(tiny_config), val_set)
        assert sorted(preds) == val_set.image_ids
        for poses in preds.values():
            assert len(poses) == 1 and poses[0].K == 4
            assert (poses[0].xy >= 0).all() and (poses[0].xy <= 15).all()

    def test_flip_logs_mode(self, tiny_config, val_set, capsys):
        model = build_network(tiny_config)
        assert len(predict(model, val_set, flip=True)) == 3
        assert "[Predict] 3 images (flip)" in capsys.readouterr().err
        predict(model, val_set, flip=True, shift=True)
        assert "(flip, shifted)" in capsys.readouterr().err

    def test_deterministic(self, tiny_config, val_set):
        a = predict(build_network(tiny_config), val_set)
        b = predict(build_network(tiny_config), val_set)
        assert all(np.array_equal(a[i][0].keypoints, b[i][0].keypoints) for i in a)


def symmetric_model(config):
    model = build_network(config, seed=5)
    model.set_training(False)
    for _, p in model.named_parameters():
        if p.value.ndim == 4:
            p.value[...] = (p.value + p.value[..., ::-1]) / 2
    return model


def mirror_symmetric_input(h, w):
    half = Rng(6).normal(1.0, (1, 1, h, w // 2))
    return np.concatenate([half, half[..., ::-1]], axis=3)


class TestFlipSymmetry:
    def heatmaps(self, model):
        return lambda v: model.forward(v).heatmaps

    def test_stride_one_network_is_exactly_mirrored(self):
        config = NetworkConfig.from_dict({
            **TINY_MODEL, "K": 1, "stem_stride": 1, "stage_strides": [1, 1], "f": 1,
        })
        model = symmetric_model(config)
        x = mirror_symmetric_input(8, 8)
        plain = model.forward(x).heatmaps.maps
        averaged = flip_average(self.heatmaps(model), x, FlipPairs(), shift=False)
        assert np.allclose(averaged.maps, plain, atol=1e-9)

    @pytest.mark.parametrize("shift", [False, True])
    def test_strided_network_flip_on_off_agree(self, shift):
        # strided encoder mirrors to within a few 1e-3 on a 16x16 softmax map
        model = symmetric_model(NetworkConfig.from_dict({**TINY_MODEL, "K": 1}))
        x = mirror_symmetric_input(16, 16)
        plain = model.forward(x).heatmaps
        averaged = flip_average(self.heatmaps(model), x, FlipPairs(), shift=shift)
        assert averaged.normalization == plain.normalization
        assert np.abs(averaged.maps - plain.maps).max() < 5e-3


class TestCheckpoint:
    def test_stored_config_round_trip(self, tiny_config, tmp_path):
        model = build_network(tiny_config)
        save_checkpoint(model, tmp_path, {"model": tiny_config.to_dict()})
        assert checkpoint_config(tmp_path) == tiny_config
        restored = load_model(tmp_path)
        assert restored.param_count() == model.param_count()

    def test_missing_config(self, tiny_config, tmp_path):
        save_checkpoint(build_network(tiny_config), tmp_path, {})
        with pytest.raises(ValueError, match="carries no model config"):
            checkpoint_config(tmp_path)


class TestEvaluate:
    def test_rejects_k_mismatch(self):
        gts = {0: [GroundTruth(Pose(np.array([[1.0, 1.0, 2.0]] * 3)), area=10.0)]}
        preds = {0: [Pose(np.array([[1.0, 1.0, 1.0]] * 2))]}
        with pytest.raises(ValueError, match="has K=2, annotations have K=3"):
            evaluate(preds, gts, OksParams.uniform(3))

    def test_write_report(self, tmp_path):
        gts = {0: [GroundTruth(Pose(np.array([[1.0, 1.0, 2.0]] * 2)), area=10.0)]}
        report = evaluate({0: [Pose(np.array([[1.0, 1.0, 1.0]] * 2))]}, gts, OksParams.uniform(2))
        files = write_report(report, tmp_path / "out")
        assert json.loads((tmp_path / "out/report.json").read_text())["AP"] == 1.0
        assert (tmp_path / "out/report.txt").read_text() == report.to_table()
        assert set(files) == {"json", "text"}


class TestDumpAttention:
    def test_writes_alpha_and_beta(self, tiny_config, val_set, tmp_path):
        index = dump_attention(build_network(tiny_config), val_set, val_set.image_ids[0], tmp_path)
        entries = json.loads(index.read_text())["blocks"]
        assert len(entries) == 2
        first = entries[0]
        alpha = load_blob(tmp_path / first["alpha"]["file"])
        beta = load_blob(tmp_path / first["beta"]["file"])
        assert alpha.shape == (1, 8, 1, 1) and beta.shape[:2] == (1, 1)
        assert ((alpha > 0) & (alpha < 1)).all() and ((beta > 0) & (beta < 1)).all()

    def test_unknown_image(self, tiny_config, val_set, tmp_path):
        with pytest.raises(ValueError, match="not in dataset"):
            dump_attention(build_network(tiny_config), val_set, 999, tmp_path)
