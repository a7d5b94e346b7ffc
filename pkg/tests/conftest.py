"""Shared fixtures: a tiny network config and a small synthetic dataset."""

import pytest

from posekit.network import NetworkConfig
from posekit.synth import SyntheticSpec, synth_splits

TINY_MODEL = {
    "stage_widths": [8, 16],
    "stage_strides": [1, 2],
    "blocks": [1, 1],
    "s": 4,
    "f": 4,
    "K": 4,
    "deconv_filters": 8,
    "precision": "f64",
}

TINY_SPEC = SyntheticSpec(height=16, width=16, K=4, template="stick9")


@pytest.fixture
def tiny_config() -> NetworkConfig:
    return NetworkConfig.from_dict(TINY_MODEL)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """Root holding ``train/`` (6 samples) and ``val/`` (3 samples)."""
    root = tmp_path_factory.mktemp("synth")
    synth_splits(TINY_SPEC, 6, 3, 0, root)
    return root
