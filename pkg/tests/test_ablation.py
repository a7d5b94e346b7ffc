"""Tests for the ablation suites."""

import json
import os
from pathlib import Path

import pytest

from posekit.ablation import SUITES, ablate, suite_variants
from posekit.dataset import PoseDataset
from posekit.network import NetworkConfig

from .conftest import TINY_MODEL
from .test_train import quick_config

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden_ablation.jsonl"


class TestSuiteVariants:
    def test_components(self):
        names = [v.name for v in suite_variants("components", 17)]
        assert names == ["baseline-sbn", "+fam", "+fsm", "+ffm-1deconv", "+duc", "full"]

    def test_components_toggle_one_module(self):
        baseline, fam = suite_variants("components", 17)[:2]
        changed = {k for k in fam.model if fam.model[k] != baseline.model[k]}
        assert changed == {"fam"}

    def test_fsm_orders(self):
        assert [v.model["fsm"] for v in suite_variants("fsm-order", 17)] == ["none", "cs-lss", "lss-cs", "parallel"]

    def test_ohkm_values(self):
        assert [v.train["R"] for v in suite_variants("ohkm", 17)] == [7, 8, 11, 13, 15, 16]

    def test_ohkm_clips_to_k(self):
        assert [v.train["R"] for v in suite_variants("ohkm", 9)] == [7, 8, 9]

    def test_ffm_variant_has_shallower_sbn_head(self):
        base = NetworkConfig.from_dict(TINY_MODEL)
        variants = {v.name: v for v in suite_variants("components", base.K)}
        plain = NetworkConfig.from_dict({**base.to_dict(), **variants["baseline-sbn"].model})
        fused = NetworkConfig.from_dict({**base.to_dict(), **variants["+ffm-1deconv"].model})
        assert (plain.head_factor, fused.head_factor) == (4, 2)

    def test_placement(self):
        variants = suite_variants("placement", 17)
        assert [v.name for v in variants] == ["baseline-sbn", "fasm-conv", "fasm-bottleneck"]
        assert [v.model.get("fasm_placement") for v in variants[1:]] == ["conv", "bottleneck"]

    def test_input_sizes(self):
        sizes = [(v.train["input_height"], v.train["input_width"]) for v in suite_variants("input-size", 17)]
        assert sizes == [(64, 48), (64, 64), (96, 72)]

    def test_input_sizes_snap_and_dedupe(self):
        variants = suite_variants("input-size", 4, input_size=(16, 16), f=4)
        assert [v.name for v in variants] == ["16x16", "24x24"]

    def test_unknown_suite(self):
        with pytest.raises(ValueError, match="Unknown ablation suite 'depth'"):
            suite_variants("depth", 17)

    def test_every_suite_builds_valid_configs(self):
        base = NetworkConfig.from_dict(TINY_MODEL)
        for suite in SUITES:
            for variant in suite_variants(suite, base.K):
                NetworkConfig.from_dict({**base.to_dict(), **variant.model})


class TestAblate:
    def test_fsm_order_suite(self, tiny_config, tiny_data, tmp_path, capsys):
        train_set = PoseDataset.load(tiny_data / "train")
        eval_set = PoseDataset.load(tiny_data / "val")
        report = ablate("fsm-order", tiny_config, quick_config(epochs=1, max_steps=1), train_set, eval_set, tmp_path)
        assert [r.variant for r in report.rows] == ["baseline", "cs-lss", "lss-cs", "parallel"]
        baseline, parallel = report.rows[0], report.rows[-1]
        assert baseline.params < parallel.params
        assert all(0.0 <= r.ap <= 1.0 for r in report.rows)
        rows = [json.loads(line) for line in (tmp_path / "ablation_log.jsonl").read_text().splitlines()]
        assert len(rows) == 4
        assert (tmp_path / "ablation.txt").read_text() == report.to_table()
        assert (tmp_path / "parallel/checkpoint/manifest.json").exists()
        assert "[Ablate] fsm-order: lss-cs" in capsys.readouterr().err

    def test_input_size_suite_resamples_data(self, tiny_config, tiny_data, tmp_path):
        train_set = PoseDataset.load(tiny_data / "train")
        eval_set = PoseDataset.load(tiny_data / "val")
        report = ablate("input-size", tiny_config, quick_config(epochs=1, max_steps=1), train_set, eval_set, tmp_path)
        assert [r.variant for r in report.rows] == ["16x16", "24x24"]
        resized = PoseDataset.load(tmp_path / "24x24/data/train")
        assert resized.image(resized.image_ids[0]).shape == (1, 24, 24)
        assert not (tmp_path / "16x16/data").exists()

    def test_placement_suite(self, tiny_config, tiny_data, tmp_path):
        train_set = PoseDataset.load(tiny_data / "train")
        eval_set = PoseDataset.load(tiny_data / "val")
        report = ablate("placement", tiny_config, quick_config(epochs=1, max_steps=1), train_set, eval_set, tmp_path)
        baseline, conv, bottleneck = report.rows
        assert conv.params == bottleneck.params > baseline.params

    @pytest.mark.slow
    def test_components_suite(self, tiny_config, tiny_data, tmp_path):
        train_set = PoseDataset.load(tiny_data / "train")
        eval_set = PoseDataset.load(tiny_data / "val")
        report = ablate("components", tiny_config, quick_config(epochs=1, max_steps=2), train_set, eval_set, tmp_path)
        assert len(report.rows) == 6
        assert report.to_dict()["rows"][-1]["variant"] == "full"


class TestGoldenLog:
    """Reduced fsm-order suite (tiny model, one step, seed 0) against ``data/golden_ablation.jsonl``.

    Every field stored in a golden row is compared: ``params`` exactly, the
    rest within tolerance.  ``POSEKIT_UPDATE_GOLDEN=1`` rewrites the file from
    the current run.
    """

    TOLERANCE = {"final_loss": 1e-6, "decode_error": 1e-6, "ap": 1e-6, "ap50": 1e-6, "ap75": 1e-6}

    def run_suite(self, config, data, out):
        train_set = PoseDataset.load(data / "train")
        eval_set = PoseDataset.load(data / "val")
        ablate("fsm-order", config, quick_config(epochs=1, max_steps=1, seed=0), train_set, eval_set, out)
        return [json.loads(line) for line in (out / "ablation_log.jsonl").read_text().splitlines()]

    def test_matches_golden_rows(self, tiny_config, tiny_data, tmp_path):
        rows = self.run_suite(tiny_config, tiny_data, tmp_path)
        if os.environ.get("POSEKIT_UPDATE_GOLDEN") == "1":
            GOLDEN.write_text("".join(json.dumps(r) + "\n" for r in rows))
        golden = [json.loads(line) for line in GOLDEN.read_text().splitlines()]
        assert [r["variant"] for r in rows] == [g["variant"] for g in golden]
        for row, expected in zip(rows, golden):
            assert row["params"] == expected["params"], row["variant"]
            for key, tol in self.TOLERANCE.items():
                if key in expected:
                    assert row[key] == pytest.approx(expected[key], abs=tol), (row["variant"], key)

    def test_same_seed_reproduces_rows(self, tiny_config, tiny_data, tmp_path):
        first = self.run_suite(tiny_config, tiny_data, tmp_path / "a")
        second = self.run_suite(tiny_config, tiny_data, tmp_path / "b")
        for a, b in zip(first, second):
            assert a["params"] == b["params"]
            for key, tol in self.TOLERANCE.items():
                assert a[key] == pytest.approx(b[key], abs=tol), (a["variant"], key)
