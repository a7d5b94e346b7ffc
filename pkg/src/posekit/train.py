"""Training loop: augment, forward, OHKM + auxiliary loss, backward, Adam step."""

from __future__ import annotations

import json
import sys
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .augment import AugmentParams, augment
from .base import GradTape, NumericalError, Param
from .blob import save_checkpoint
from .codec import HeatmapStack, Pose, mse_loss, ohkm_mse_loss, render_targets
from .dataset import PoseDataset, stack_images
from .hooks import HookResult, TrainHook, run_hooks
from .network import EfafNet, NetworkConfig, build_network
from .tensor import Rng, worker_count

LOG_NAME = "train_log.jsonl"
CHECKPOINT_DIR = "checkpoint"
PREFETCH_DEPTH = 2


@dataclass
class TrainConfig:
    base_lr: float = 5e-4
    lr_factor: float = 0.1
    milestones: list[int] | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 150
    R: int = 8
    seed: int = 0
    input_height: int = 64
    input_width: int = 48
    sigma: float = 1.0
    augment: bool = True
    compare: str = "peak"
    max_steps: int | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError(f"Need epochs >= 1 and batch_size >= 2, got {self.epochs}, {self.batch_size}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.compare not in ("peak", "sum"):
            raise ValueError(f"compare must be 'peak' or 'sum', got {self.compare!r}")
        if self.milestones is not None:
            m = list(self.milestones)
            if any(b <= a for a, b in zip(m, m[1:])) or any(x < 1 or x >= self.epochs for x in m):
                raise ValueError(f"Milestones {m} must be strictly increasing and inside (0, {self.epochs})")

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = set(cls.__dataclass_fields__)
        for key in data:
            if key not in known:
                raise ValueError(f"Unknown train config key: {key!r}")
        return cls(**data)

    def resolved_milestones(self) -> list[int]:
        """Explicit milestones, else 60% and 80% of the epoch count."""
        if self.milestones is not None:
            return list(self.milestones)
        derived = sorted({int(self.epochs * 0.6), int(self.epochs * 0.8)})
        return [m for m in derived if 0 < m < self.epochs]

    def lr_at(self, epoch: int) -> float:
        """Learning rate for the 0-based *epoch*."""
        passed = sum(1 for m in self.resolved_milestones() if epoch >= m)
        return self.base_lr * self.lr_factor**passed


class Adam:
    def __init__(self, params: list[Param], *, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.value -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.value.dtype)


@dataclass
class StepResult:
    loss: float
    ohkm: float
    mse: float
    aux: float


@dataclass
class TrainResult:
    success: bool
    checkpoint: str | None = None
    log_path: str | None = None
    final_loss: float | None = None
    final_mse: float | None = None
    steps: int = 0
    epochs_run: int = 0
    hook_results: list[HookResult] = field(default_factory=list)
    error: str | None = None


def compute_loss(
    model: EfafNet, x: np.ndarray, target: HeatmapStack, mask: np.ndarray, cfg: TrainConfig, tape: GradTape | None,
) -> tuple[StepResult, np.ndarray, np.ndarray | None]:
    """Forward pass and loss; returns (values, grad for heatmaps, grad for auxiliary maps)."""
    art = model.forward(x, tape)
    R = min(cfg.R, target.K)
    main = ohkm_mse_loss(art.heatmaps, target, mask, R, cfg.compare)
    total, aux_value, g_aux = main.value, 0.0, None
    if art.aux_heatmaps is not None:
        lam = model.config.aux_weight
        aux = mse_loss(art.aux_heatmaps, target, mask, cfg.compare)
        aux_value = aux.value
        total += lam * aux.value
        g_aux = lam * aux.grad
    return StepResult(total, main.value, main.mse, aux_value), main.grad, g_aux


def train_step(
    model: EfafNet, optimizer: Adam, x: np.ndarray, target: HeatmapStack, mask: np.ndarray,
    cfg: TrainConfig, lr: float, step: int,
) -> StepResult:
    model.zero_grad()
    tape = GradTape()
    result, g_maps, g_aux = compute_loss(model, x, target, mask, cfg, tape)
    if not np.isfinite(result.loss):
        raise NumericalError(f"Loss is {result.loss} at step {step}", step=step)
    model.backward(g_maps, g_aux, tape)
    if len(tape):
        raise RuntimeError(f"{len(tape)} tape records left after backward")
    optimizer.step(lr)
    return result


# ---------------------------------------------------------------------------
# Data pipeline
# ---------------------------------------------------------------------------

def epoch_batches(n: int, batch_size: int, rng: Rng) -> list[np.ndarray]:
    """Shuffled index batches; a trailing single sample joins the previous batch."""
    order = rng.generator.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def load_batch(
    dataset: PoseDataset, indices: np.ndarray, epoch: int, cfg: TrainConfig, dtype,
) -> tuple[np.ndarray, HeatmapStack, np.ndarray, list[Pose]]:
    images, poses = [], []
    params = AugmentParams()
    for idx in indices:
        sample = dataset.sample(int(idx))
        image, pose = sample.image, sample.pose
        if image.shape[1:] != (cfg.input_height, cfg.input_width):
            raise ValueError(
                f"Image {sample.image_id} is {image.shape[1]}x{image.shape[2]}, "
                f"training input is {cfg.input_height}x{cfg.input_width}"
            )
        if cfg.augment:
            rng = Rng(cfg.seed, 2, epoch, int(idx))
            image, pose = augment(image, pose, params, rng, dataset.meta.flip_pairs)
        images.append(image)
        poses.append(pose)
    target, mask = render_targets(poses, (cfg.input_height, cfg.input_width), cfg.sigma)
    return stack_images(images, dtype), HeatmapStack(target.maps.astype(dtype), "peak"), mask, poses


def prefetch(batches: list[np.ndarray], load, depth: int = PREFETCH_DEPTH) -> Iterator:
    """Yield ``load(batch)`` in order while up to *depth* later batches load on worker threads."""
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        pending: deque = deque()
        it = iter(batches)
        for batch in it:
            pending.append(pool.submit(load, batch))
            if len(pending) > depth:
                break
        while pending:
            yield pending.popleft().result()
            nxt = next(it, None)
            if nxt is not None:
                pending.append(pool.submit(load, nxt))


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------

def train(
    model_config: NetworkConfig,
    cfg: TrainConfig,
    dataset: PoseDataset,
    out_dir: Path,
    hooks: list[TrainHook] | None = None,
    model: EfafNet | None = None,
) -> TrainResult:
    """Train from scratch (or continue *model*), write the JSON-lines log and a final checkpoint.

    Raises NumericalError carrying the step index when the loss diverges.
    """
    if len(dataset) < 2:
        raise ValueError(f"Training needs at least 2 samples, dataset has {len(dataset)}")
    if dataset.K != model_config.K:
        raise ValueError(f"Dataset has K={dataset.K}, model config has K={model_config.K}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = model or build_network(model_config, cfg.seed)
    model.set_training(True)
    params = [p for _, p in model.named_parameters()]
    optimizer = Adam(params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    dtype = model_config.dtype
    log_path = out_dir / LOG_NAME
    result = TrainResult(success=False, log_path=str(log_path))
    step = 0

    with open(log_path, "w", encoding="utf-8") as log:
        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            lr = cfg.lr_at(epoch)
            batches = epoch_batches(len(dataset), cfg.batch_size, Rng(cfg.seed, 1, epoch))
            totals = np.zeros(3)
            count = 0
            for x, target, mask, _ in prefetch(batches, lambda b, e=epoch: load_batch(dataset, b, e, cfg, dtype)):
                out = train_step(model, optimizer, x, target, mask, cfg, lr, step)
                step += 1
                totals += (out.loss, out.mse, out.aux)
                count += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
            loss, mse, aux = (totals / max(count, 1)).tolist()
            record = {"epoch": epoch + 1, "lr": lr, "loss": loss, "mse": mse, "aux": aux, "steps": step}
            log.write(json.dumps(record) + "\n")
            log.flush()
            print(
                f"  [Train] epoch {epoch + 1}/{cfg.epochs} loss={loss:.6f} mse={mse:.6f} "
                f"lr={lr:.2e} ({time.perf_counter() - started:.1f}s)",
                file=sys.stderr,
            )
            result.epochs_run = epoch + 1
            result.final_loss, result.final_mse = loss, mse
            if hooks:
                result.hook_results.extend(run_hooks(hooks, record, out_dir))
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break

    ckpt = out_dir / CHECKPOINT_DIR
    save_checkpoint(model, ckpt, {"model": model_config.to_dict(), "train": asdict(cfg)})
    result.success = True
    result.checkpoint = str(ckpt)
    result.steps = step
    return result
