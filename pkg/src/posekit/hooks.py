"""Post-epoch training hooks.

Hooks run after every training epoch with the epoch's log record, e.g. to
snapshot checkpoints or push metrics elsewhere, without coupling the training
loop to that logic.

Two invocation mechanisms:
1. CLI ``--hook`` flag: ``posekit train --hook ./my_hook.py``
2. Config file ``.posekit.toml`` in CWD (``[[hooks]]`` tables)
"""

from __future__ import annotations

import importlib.util
import sys
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

CONFIG_NAME = ".posekit.toml"


@dataclass
class HookResult:
    """Result returned by a post-epoch hook."""

    success: bool
    files_created: list[str] = field(default_factory=list)
    error: str | None = None


@runtime_checkable
class TrainHook(Protocol):
    """Hook that runs after a training epoch."""

    def should_run(self, record: dict, out_dir: Path) -> bool:
        """Return True if this hook should process the epoch record."""
        ...

    def run(self, record: dict, out_dir: Path) -> HookResult:
        ...


def load_hook_from_script(script_path: str | Path) -> TrainHook:
    """Load a TrainHook from a Python script defining a ``hook()`` factory.

    Raises:
        FileNotFoundError: If the script doesn't exist.
        ValueError: If the script doesn't define a ``hook()`` function.
        TypeError: If ``hook()`` returns something that is not a TrainHook.
    """
    path = Path(script_path).resolve()
    if not path.exists():
        raise FileNotFoundError(f"Hook script not found: {path}")

    spec = importlib.util.spec_from_file_location(f"_hook_{path.stem}", path)
    if spec is None or spec.loader is None:
        raise ValueError(f"Cannot load hook script: {path}")

    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)

    factory = getattr(module, "hook", None)
    if factory is None:
        raise ValueError(f"Hook script {path.name} must define a hook() factory function")

    instance = factory()
    if not isinstance(instance, TrainHook):
        raise TypeError(f"hook() in {path.name} must return a TrainHook (got {type(instance).__name__})")
    return instance


def load_hooks_from_config(config_path: str | Path | None = None) -> list[TrainHook]:
    """Load hooks from ``[[hooks]]`` tables of a ``.posekit.toml`` file.

    Config format::

        [[hooks]]
        script = "./scripts/snapshot.py"
        every = 5  # optional: only every 5th epoch

    Scripts resolve relative to the config file.  Broken hooks are reported
    and skipped.
    """
    config_path = Path.cwd() / CONFIG_NAME if config_path is None else Path(config_path)
    if not config_path.exists():
        return []

    with open(config_path, "rb") as f:
        config = tomllib.load(f)

    hooks: list[TrainHook] = []
    for hook_cfg in config.get("hooks", []):
        script = hook_cfg.get("script")
        if not script:
            continue
        try:
            hook = load_hook_from_script(config_path.parent / script)
            every = int(hook_cfg.get("every", 1))
            if every > 1:
                hook = _EveryNEpochs(hook, every)
            hooks.append(hook)
        except (FileNotFoundError, ValueError, TypeError) as e:
            print(f"Warning: Failed to load hook {script}: {e}", file=sys.stderr)
    return hooks


class _EveryNEpochs:
    """Wrapper that only lets every n-th epoch through."""

    def __init__(self, inner: TrainHook, every: int) -> None:
        self._inner = inner
        self._every = every

    def should_run(self, record: dict, out_dir: Path) -> bool:
        if int(record.get("epoch", 0)) % self._every:
            return False
        return self._inner.should_run(record, out_dir)

    def run(self, record: dict, out_dir: Path) -> HookResult:
        return self._inner.run(record, out_dir)


def run_hooks(hooks: list[TrainHook], record: dict, out_dir: Path) -> list[HookResult]:
    """Execute all applicable hooks; failures are recorded, never raised."""
    results: list[HookResult] = []
    for hook in hooks:
        try:
            if hook.should_run(record, out_dir):
                result = hook.run(record, out_dir)
                results.append(result)
                if result.files_created:
                    print(
                        f"  [Hook] {type(hook).__name__}: {len(result.files_created)} files created",
                        file=sys.stderr,
                    )
        except Exception as e:
            print(f"  [Hook] {type(hook).__name__} error: {e}", file=sys.stderr)
            results.append(HookResult(success=False, error=str(e)))
    return results
