"""End-to-end tests of the command-line interface."""

import json

import pytest

from posekit import cli
from posekit.base import NumericalError
from posekit.cli import main
from posekit.gradcheck import CaseReport, GradcheckReport

TINY_TOML = """\
stage_widths = [8, 16]
stage_strides = [1, 2]
blocks = [1, 1]
s = 4
f = 4
K = 4
deconv_filters = 8
precision = "f64"

[train]
epochs = 1
batch_size = 3
input_height = 16
input_width = 16
R = 2
"""


@pytest.fixture
def workspace(tmp_path):
    config = tmp_path / "tiny.toml"
    config.write_text(TINY_TOML)
    return tmp_path, config


def run(argv, capsys) -> tuple[int, dict | None, str]:
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    payload = json.loads(captured.out) if captured.out.strip() else None
    return code, payload, captured.err


class TestPipeline:
    def test_synth_train_predict_eval(self, workspace, capsys):
        root, config = workspace
        data = root / "data"

        code, payload, _ = run(["synth", "--config", config, "--out", data, "--count", 6, "--val-count", 3, "--template", "stick9"], capsys)
        assert code == 0 and payload["success"]
        assert (data / "train/annotations.json").exists()

        code, payload, err = run(["train", "--config", config, "--data", data, "--out", root / "run", "--no-config-hooks"], capsys)
        assert code == 0
        assert payload["epochs_run"] == 1 and payload["steps"] == 2
        assert "[Train]" in err

        ckpt = root / "run/checkpoint"
        code, payload, _ = run(["predict", "--checkpoint", ckpt, "--data", data / "val", "--out", root / "preds", "--flip"], capsys)
        assert code == 0 and payload["images"] == 3
        preds = root / "preds/predictions.json"
        assert len(json.loads(preds.read_text())) == 3

        code, payload, err = run(["predict", "--checkpoint", ckpt, "--data", data / "val", "--out", root / "shifted.json", "--flip-shift"], capsys)
        assert code == 0 and payload["predictions"].endswith("shifted.json")
        assert "(flip, shifted)" in err

        code, payload, err = run(["eval", "--predictions", preds, "--data", data / "val", "--out", root / "report"], capsys)
        assert code == 0
        assert 0.0 <= payload["AP"] <= 1.0
        assert (root / "report/report.txt").read_text() in err

        code, payload, _ = run(["dump-attention", "--checkpoint", ckpt, "--data", data / "val", "--image-id", 0, "--out", root / "attn"], capsys)
        assert code == 0
        index = json.loads((root / "attn/attention.json").read_text())
        assert [b["block"] for b in index["blocks"]] == ["stage1.block1", "stage2.block1"]

    def test_predict_with_wrong_head_fails(self, workspace, tiny_data, capsys):
        root, config = workspace
        run(["train", "--config", config, "--data", tiny_data, "--out", root / "run", "--no-config-hooks"], capsys)
        code, _, err = run(["predict", "--checkpoint", root / "run/checkpoint", "--data", tiny_data / "val",
                            "--out", root / "p.json", "--head", "sbn"], capsys)
        assert code == 1
        assert "does not match model config" in err

    def test_train_hook_flag(self, workspace, tiny_data, capsys):
        root, config = workspace
        script = root / "hook.py"
        script.write_text(
            "from posekit.hooks import HookResult\n"
            "class H:\n"
            "    def should_run(self, record, out_dir):\n"
            "        return True\n"
            "    def run(self, record, out_dir):\n"
            "        (out_dir / 'hooked.txt').write_text(str(record['epoch']))\n"
            "        return HookResult(success=True, files_created=[str(out_dir / 'hooked.txt')])\n"
            "def hook():\n"
            "    return H()\n"
        )
        code, payload, _ = run(["train", "--config", config, "--data", tiny_data, "--out", root / "run",
                                "--hook", script, "--no-config-hooks"], capsys)
        assert code == 0
        assert payload["hook_results"][0]["success"] is True
        assert (root / "run/hooked.txt").read_text() == "1"


class TestExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        code, _, err = run(["synth", "--config", tmp_path / "nope.toml", "--out", tmp_path], capsys)
        assert code == 1
        assert "Config file not found" in err

    def test_missing_predictions(self, tiny_data, tmp_path, capsys):
        code, _, err = run(["eval", "--predictions", tmp_path / "none.json", "--data", tiny_data / "val", "--out", tmp_path], capsys)
        assert code == 1
        assert "Prediction file not found" in err

    def test_gradcheck_passes(self, capsys):
        code, payload, _ = run(["gradcheck", "--scope", "dense"], capsys)
        assert code == 0 and payload["passed"] is True

    def test_gradcheck_rejects_single_precision(self, capsys):
        code, _, err = run(["gradcheck", "--precision", "f32"], capsys)
        assert code == 1
        assert "double precision" in err

    def test_gradcheck_unknown_scope(self, capsys):
        code, _, _ = run(["gradcheck", "--scope", "everything"], capsys)
        assert code == 1

    def test_failed_gradcheck_is_numerical(self, monkeypatch, capsys):
        failing = GradcheckReport("all", 1e-4, [CaseReport("conv", {"weight": 0.3})])
        monkeypatch.setattr(cli, "run_gradcheck", lambda scope, seed: failing)
        code, payload, err = run(["gradcheck"], capsys)
        assert code == 2
        assert payload["passed"] is False
        assert "exceeds" in err

    def test_nan_loss_reports_step(self, workspace, tiny_data, monkeypatch, capsys):
        root, config = workspace

        def exploding(*args, **kwargs):
            raise NumericalError("loss is nan", step=5)

        monkeypatch.setattr(cli, "train", exploding)
        code, _, err = run(["train", "--config", config, "--data", tiny_data, "--out", root / "x", "--no-config-hooks"], capsys)
        assert code == 2
        assert "(step 5)" in err

    def test_unknown_config_key(self, tmp_path, capsys):
        config = tmp_path / "bad.toml"
        config.write_text("depth = 3\n")
        code, _, err = run(["synth", "--config", config, "--out", tmp_path], capsys)
        assert code == 1
        assert "Unknown model config key: 'depth'" in err
