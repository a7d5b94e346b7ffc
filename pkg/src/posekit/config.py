"""TOML configuration: flat model keys, an optional ``[train]`` table and ``[[hooks]]``.

Example ``.posekit.toml``::

    stage_widths = [16, 32, 64]
    blocks = [1, 1, 1]
    f = 8
    K = 17
    head = "duc"

    [train]
    epochs = 20
    batch_size = 16

    [[hooks]]
    script = "./hooks/snapshot.py"
    every = 5
"""

from __future__ import annotations

import tomllib
from dataclasses import dataclass, field
from pathlib import Path

from .hooks import CONFIG_NAME
from .network import NetworkConfig
from .train import TrainConfig

_TABLES = ("train", "hooks")


@dataclass
class LoadedConfig:
    model: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    path: Path | None = None


def parse_config(data: dict, overrides: dict | None = None, train_overrides: dict | None = None) -> LoadedConfig:
    model_keys = {k: v for k, v in data.items() if k not in _TABLES}
    model_keys.update(overrides or {})
    train_keys = dict(data.get("train", {}))
    train_keys.update(train_overrides or {})
    return LoadedConfig(NetworkConfig.from_dict(model_keys), TrainConfig.from_dict(train_keys))


def load_config(
    path: str | Path | None = None,
    overrides: dict | None = None,
    train_overrides: dict | None = None,
) -> LoadedConfig:
    """Read *path*, or ``.posekit.toml`` in CWD when omitted; defaults when neither exists.

    An explicitly named file that does not exist is an error.
    """
    if path is None:
        candidate = Path.cwd() / CONFIG_NAME
        if not candidate.exists():
            return parse_config({}, overrides, train_overrides)
        path = candidate
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path.resolve()}")
    with open(path, "rb") as f:
        data = tomllib.load(f)
    loaded = parse_config(data, overrides, train_overrides)
    loaded.path = path
    return loaded
