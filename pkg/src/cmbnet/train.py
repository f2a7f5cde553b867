"""Adam training loop, threshold evaluation and CMBT checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .io import load_tensor, save_tensor
from .losses import total_loss
from .model import CMBNet, RunConfig
from .tensor import _sigmoid

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- metrics --------------------------------------------------------------------
def confusion(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    pred, gt = pred.astype(bool), gt.astype(bool)
    return int((pred & gt).sum()), int((pred & ~gt).sum()), int((~pred & gt).sum())


def f1_iou(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """F1 and IoU of a binary prediction; an empty prediction on an empty mask scores 1."""
    tp, fp, fn = confusion(pred, gt)
    if tp + fp + fn == 0:
        return 1.0, 1.0
    return 2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn)


def upsample_bilinear(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Half-pixel-centred bilinear resize of the last two axes."""

    def axis_weights(n_in, n_out):
        src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    (ylo, yhi, fy), (xlo, xhi, fx) = axis_weights(x.shape[-2], shape[0]), axis_weights(x.shape[-1], shape[1])
    rows = x[..., ylo, :] * (1 - fy)[:, None] + x[..., yhi, :] * fy[:, None]
    return rows[..., xlo] * (1 - fx) + rows[..., xhi] * fx


@dataclass
class EvalResult:
    f1: float
    iou: float
    per_image: list[tuple[float, float]] = field(default_factory=list)
    ambiguity: np.ndarray | None = None

    def ambiguity_gap(self, matched: np.ndarray) -> float | None:
        if self.ambiguity is None:
            return None
        return float(self.ambiguity[~matched].mean() - self.ambiguity[matched].mean())


@dataclass
class Prediction:
    mask: np.ndarray  # (n, H, W) probabilities at full resolution
    edge: np.ndarray | None  # (n, H, W) boundary probabilities, None without the edge branch
    ambiguity: np.ndarray | None  # (n,) or None without the ambiguity gate


def predict(model: CMBNet, images: np.ndarray, texts: np.ndarray, batch: int = 16) -> Prediction:
    """Full-resolution probabilities from the finest block, in eval mode."""
    model.eval()
    masks, edges, amb = [], [], []
    H, W = images.shape[-2:]
    for s in range(0, len(images), batch):
        fw = model(images[s:s + batch], texts[s:s + batch])
        masks.append(_sigmoid(upsample_bilinear(fw.final.data[:, 0], (H, W))))
        E = fw.outputs[-1].E
        if E is not None:
            edges.append(_sigmoid(upsample_bilinear(E.data[:, 0], (H, W))))
        if fw.ambiguity is not None:
            amb.append(fw.ambiguity.a.data.copy())
    return Prediction(np.concatenate(masks), np.concatenate(edges) if edges else None,
                      np.concatenate(amb) if amb else None)


def evaluate(model: CMBNet, data: Dataset, threshold: float = 0.5, batch: int = 16,
             prediction: Prediction | None = None) -> EvalResult:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    pred = prediction or predict(model, data.images, data.texts, batch)
    if pred.mask.shape != data.masks.shape:
        raise ValueError(f"prediction resolution {pred.mask.shape[1:]} != mask resolution {data.masks.shape[1:]}")
    scores = [f1_iou(p > threshold, g > 0.5) for p, g in zip(pred.mask, data.masks)]
    f1 = float(np.mean([s[0] for s in scores]))
    iou = float(np.mean([s[1] for s in scores]))
    return EvalResult(f1, iou, scores, pred.ambiguity)


# -- checkpoints ----------------------------------------------------------------
def save_checkpoint(model: CMBNet, path, extra: dict | None = None) -> Path:
    root = Path(path)
    (root / "params").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, arr) in enumerate(sorted(model.state_dict().items())):
        fname = f"params/{i:04d}.cmbt"
        save_tensor(root / fname, arr)
        entries.append({"name": name, "file": fname, "shape": list(arr.shape)})
    manifest = {"config": model.config.to_dict(), "tensors": entries, **(extra or {})}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return root


def load_checkpoint(path) -> CMBNet:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    cfg = manifest["config"]
    cfg["channels"] = tuple(cfg["channels"])
    model = CMBNet(RunConfig(**cfg))
    model.load_state_dict({e["name"]: load_tensor(root / e["file"]) for e in manifest["tensors"]})
    return model


# -- training -------------------------------------------------------------------
def train(config: RunConfig, data: Dataset, val: Dataset | None = None, out_dir=None,
          log_path=None) -> tuple[CMBNet, list[dict]]:
    """Minimise the summed mask + boundary loss with Adam; returns the model and the epoch log."""
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    model = CMBNet(config, np.random.default_rng(seeds[0]))
    order_rng = np.random.default_rng(seeds[1])
    noise_rng = np.random.default_rng(seeds[2])
    opt = Adam(model.parameters(), lr=config.lr)
    history: list[dict] = []
    sink = open(log_path, "w") if log_path else None
    last_good = model.state_dict()
    try:
        for epoch in range(1, config.epochs + 1):
            model.train()
            order = order_rng.permutation(len(data))
            losses = []
            for s in range(0, len(order), config.batch):
                idx = np.sort(order[s:s + config.batch])
                if len(idx) < 2:
                    continue  # batch statistics need more than one sample
                fw = model(data.images[idx], data.texts[idx], noise_rng)
                loss, _ = total_loss(fw.outputs, data.masks[idx])
                if not math.isfinite(loss.item()):
                    model.load_state_dict(last_good)
                    if out_dir:
                        save_checkpoint(model, out_dir, {"diverged_at_epoch": epoch})
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {s // config.batch}")
                model.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item())
            last_good = model.state_dict()
            rec = {"epoch": epoch, "loss": float(np.mean(losses)), "step_losses": losses}
            if val is not None:
                res = evaluate(model, val, config.threshold)
                rec.update(val_f1=res.f1, val_iou=res.iou)
                gap = res.ambiguity_gap(val.matched)
                if gap is not None:
                    rec["val_ambiguity_gap"] = gap
            history.append(rec)
            log.info("epoch %d loss %.4f %s", epoch, rec["loss"],
                     {k: round(v, 4) for k, v in rec.items() if k.startswith("val_")})
            if sink:
                sink.write(json.dumps(rec) + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()
    if out_dir:
        save_checkpoint(model, out_dir)
    return model, history
