"""Ablation suites: train each variant under one budget and compare side by side."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .dataset import PoseDataset, resize_dataset
from .inference import predict
from .metrics import build_report, mean_keypoint_error
from .network import NetworkConfig, build_network
from .train import TrainConfig, train

OHKM_R = (7, 8, 11, 13, 15, 16)


@dataclass(frozen=True)
class Variant:
    name: str
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)


def _components() -> list[Variant]:
    plain = {"fam": False, "fsm": "none", "ffm": False}
    return [
        Variant("baseline-sbn", {**plain, "head": "sbn"}),
        Variant("+fam", {**plain, "head": "sbn", "fam": True}),
        Variant("+fsm", {**plain, "head": "sbn", "fsm": "parallel"}),
        # with FFM the SBN head reads the fused low-stride map and builds fewer deconvs
        Variant("+ffm-1deconv", {**plain, "head": "sbn", "ffm": True}),
        Variant("+duc", {**plain, "head": "duc"}),
        Variant("full", {"head": "duc", "fam": True, "fsm": "parallel", "ffm": True}),
    ]


def _fsm_order() -> list[Variant]:
    return [
        Variant("baseline", {"fsm": "none"}),
        Variant("cs-lss", {"fsm": "cs-lss"}),
        Variant("lss-cs", {"fsm": "lss-cs"}),
        Variant("parallel", {"fsm": "parallel"}),
    ]


def _ohkm(K: int) -> list[Variant]:
    values = sorted({min(r, K) for r in OHKM_R})
    return [Variant(f"R={r}", train={"R": r}) for r in values]


def _placement() -> list[Variant]:
    fasm = {"head": "sbn", "fam": True, "fsm": "parallel", "ffm": False}
    return [
        Variant("baseline-sbn", {"head": "sbn", "fam": False, "fsm": "none", "ffm": False}),
        Variant("fasm-conv", {**fasm, "fasm_placement": "conv"}),
        Variant("fasm-bottleneck", {**fasm, "fasm_placement": "bottleneck"}),
    ]


def _input_size(height: int, width: int, f: int) -> list[Variant]:
    """The training size, its square and 1.5x, each rounded to a multiple of f."""

    def snap(v: float) -> int:
        return max(f, int(round(v / f)) * f)

    sizes: list[tuple[int, int]] = []
    for size in ((height, width), (height, height), (snap(1.5 * height), snap(1.5 * width))):
        if size not in sizes:
            sizes.append(size)
    return [Variant(f"{h}x{w}", train={"input_height": h, "input_width": w}) for h, w in sizes]


SUITES = ("components", "fsm-order", "ohkm", "placement", "input-size")


def suite_variants(suite: str, K: int, *, input_size: tuple[int, int] = (64, 48), f: int = 8) -> list[Variant]:
    if suite == "components":
        return _components()
    if suite == "fsm-order":
        return _fsm_order()
    if suite == "ohkm":
        return _ohkm(K)
    if suite == "placement":
        return _placement()
    if suite == "input-size":
        return _input_size(*input_size, f)
    raise ValueError(f"Unknown ablation suite {suite!r}, expected one of {SUITES}")


@dataclass
class AblationRow:
    variant: str
    params: int
    final_loss: float
    decode_error: float
    ap: float
    ap50: float
    ap75: float


@dataclass
class AblationReport:
    suite: str
    seed: int
    rows: list[AblationRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "seed": self.seed, "rows": [asdict(r) for r in self.rows]}

    def to_table(self) -> str:
        header = f"{'variant':<14} {'params':>8} {'loss':>10} {'err(px)':>8} {'AP':>6} {'AP.5':>6} {'AP.75':>6}"
        lines = [f"# ablation suite={self.suite} seed={self.seed}", header]
        for r in self.rows:
            lines.append(
                f"{r.variant:<14} {r.params:>8d} {r.final_loss:>10.6f} {r.decode_error:>8.3f} "
                f"{r.ap:>6.3f} {r.ap50:>6.3f} {r.ap75:>6.3f}"
            )
        return "\n".join(lines) + "\n"


def ablate(
    suite: str,
    base: NetworkConfig,
    cfg: TrainConfig,
    train_set: PoseDataset,
    eval_set: PoseDataset,
    out_dir: Path,
) -> AblationReport:
    """Train every variant of *suite* with the same seed, data order and budget.

    Variants that change the input size train and evaluate on copies of the
    datasets resampled under ``<variant>/data/``; their decode error is in
    pixels of that size.
    """
    out_dir = Path(out_dir)
    report = AblationReport(suite, cfg.seed)
    log_path = out_dir / "ablation_log.jsonl"
    out_dir.mkdir(parents=True, exist_ok=True)
    size = (cfg.input_height, cfg.input_width)
    with open(log_path, "w", encoding="utf-8") as log:
        for variant in suite_variants(suite, base.K, input_size=size, f=base.f):
            print(f"  [Ablate] {suite}: {variant.name}", file=sys.stderr)
            model_cfg = replace(base, **variant.model)
            train_cfg = replace(cfg, **variant.train)
            run_dir = out_dir / variant.name.replace("=", "-")
            train_v, eval_v = train_set, eval_set
            if (train_cfg.input_height, train_cfg.input_width) != size:
                h, w = train_cfg.input_height, train_cfg.input_width
                train_v = resize_dataset(train_set, h, w, run_dir / "data/train")
                eval_v = resize_dataset(eval_set, h, w, run_dir / "data/val")
            model = build_network(model_cfg, train_cfg.seed)
            result = train(model_cfg, train_cfg, train_v, run_dir, model=model)
            preds = predict(model, eval_v)
            metrics = build_report(preds, eval_v.ground_truths, eval_v.meta.oks_params())
            row = AblationRow(
                variant=variant.name,
                params=model.param_count(),
                final_loss=float(result.final_loss),
                decode_error=mean_keypoint_error(preds, eval_v.ground_truths),
                ap=metrics.mean_ap,
                ap50=metrics.to_dict()["AP.5"],
                ap75=metrics.to_dict()["AP.75"],
            )
            report.rows.append(row)
            log.write(json.dumps(asdict(row)) + "\n")
    (out_dir / "ablation.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    (out_dir / "ablation.txt").write_text(report.to_table(), encoding="utf-8")
    return report
