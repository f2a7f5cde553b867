"""The desk-scale experiment: fixed synthetic splits, one training run per ablation row."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .data import Dataset, gen_dataset, load_dataset
from .model import ABLATIONS, CMBNet, RunConfig
from .train import evaluate, train

TRAIN_SPLIT = {"n": 400, "seed": 1}
TEST_SPLIT = {"n": 100, "seed": 1001}
IMAGE_SIZE = 64


@dataclass
class RowResult:
    ablation: str
    f1: float
    iou: float
    ambiguity_gap: float | None
    seconds: float
    history: list[dict]
    model: CMBNet | None = None

    def as_dict(self) -> dict:
        return {"ablation": self.ablation, "f1": self.f1, "iou": self.iou,
                "ambiguity_gap": self.ambiguity_gap, "seconds": round(self.seconds, 1)}


def desk_splits(root, size: int = IMAGE_SIZE) -> tuple[Dataset, Dataset]:
    """Generate (or reuse) the 400-sample training split and the 100-sample held-out split."""
    root = Path(root)
    out = []
    for name, split in (("train", TRAIN_SPLIT), ("test", TEST_SPLIT)):
        d = root / name
        if not (d / "manifest.json").exists():
            gen_dataset(d, split["n"], split["seed"], size)
        out.append(load_dataset(d))
    return out[0], out[1]


def run_row(config: RunConfig, train_set: Dataset, test_set: Dataset, log_path=None,
            keep_model: bool = False) -> RowResult:
    t0 = time.perf_counter()
    model, history = train(config, train_set, log_path=log_path)
    seconds = time.perf_counter() - t0
    res = evaluate(model, test_set, config.threshold)
    return RowResult(config.ablation, res.f1, res.iou, res.ambiguity_gap(test_set.matched), seconds, history,
                     model if keep_model else None)


def ablation_table(rows: list[RowResult]) -> str:
    lines = ["| ablation | F1 | IoU | ambiguity gap | train s |", "|---|---|---|---|---|"]
    for r in sorted(rows, key=lambda r: ABLATIONS.index(r.ablation)):
        gap = "-" if r.ambiguity_gap is None else f"{r.ambiguity_gap:.4f}"
        lines.append(f"| {r.ablation} | {r.f1:.4f} | {r.iou:.4f} | {gap} | {r.seconds:.0f} |")
    return "\n".join(lines)
