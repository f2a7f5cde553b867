"""Weighted BCE + weighted IoU on mask logits, Dice on boundary logits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from . import tensor as T
from .tensor import ShapeError, Tensor

DICE_SMOOTH = 1.0


def check_binary(G: np.ndarray, what: str = "mask") -> None:
    if not np.all((G == 0) | (G == 1)):
        raise ValueError(f"{what} must be binary (0/1)")


def resize_nearest(G: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest resize of (..., H, W) to (..., h, w), sampling cell centres."""
    H, W = G.shape[-2:]
    h, w = shape
    rows = np.minimum(((np.arange(h) + 0.5) * H / h).astype(int), H - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * W / w).astype(int), W - 1)
    return G[..., rows[:, None], cols[None, :]]


def boundary_gt(G: np.ndarray) -> np.ndarray:
    """Morphological gradient dilate3x3(G) - erode3x3(G); edges of the frame are replicated."""
    G = np.asarray(G, dtype=np.float64)
    pad = [(0, 0)] * (G.ndim - 2) + [(1, 1), (1, 1)]
    gp = np.pad(G, pad, mode="edge")
    H, W = G.shape[-2:]
    shifts = [gp[..., i:i + H, j:j + W] for i in range(3) for j in range(3)]
    return np.max(shifts, axis=0) - np.min(shifts, axis=0)


def pixel_weights(G: np.ndarray, kernel: int = 15, factor: float = 5.0) -> np.ndarray:
    """1 + factor * |avgpool(G) - G| with zero padding; the kernel shrinks (odd) on small grids."""
    h, w = G.shape[-2:]
    k = min(kernel, h, w)
    if k % 2 == 0:
        k -= 1
    size = (1,) * (G.ndim - 2) + (k, k)
    avg = uniform_filter(G.astype(np.float64), size=size, mode="constant", cval=0.0)
    return 1.0 + factor * np.abs(avg - G)


def _as_maps(logits: Tensor, G: np.ndarray) -> tuple[Tensor, np.ndarray]:
    G = np.asarray(G, dtype=np.float64)
    if logits.ndim == 4:
        if logits.shape[1] != 1:
            raise ShapeError(f"expected one-channel logits, got {logits.shape}")
        logits = T.reshape(logits, (logits.shape[0],) + logits.shape[2:])
    if G.ndim == 2:
        G = G[None]
    if G.shape[-2:] != logits.shape[-2:]:
        G = resize_nearest(G, logits.shape[-2:])
    if G.shape != logits.shape:
        raise ShapeError(f"ground truth {G.shape} vs logits {logits.shape}")
    return logits, G


def weighted_bce_iou(logits: Tensor, G: np.ndarray) -> tuple[Tensor, Tensor]:
    """Per-image weighted BCE and weighted IoU losses, averaged over the batch."""
    G = np.asarray(G, dtype=np.float64)
    check_binary(G)
    x, G = _as_maps(logits, G)
    w = pixel_weights(G)
    axes = (1, 2)
    bce = T.sub(T.softplus(x), T.mul(x, G))
    l_bce = T.div(T.tsum(T.mul(bce, w), axis=axes), w.sum(axis=axes))
    p = T.sigmoid(x)
    inter = T.tsum(T.mul(T.mul(p, G), w), axis=axes)
    union = T.tsum(T.mul(T.sub(T.add(p, G), T.mul(p, G)), w), axis=axes)
    l_iou = T.sub(1.0, T.div(inter, union))
    return T.mean(l_bce), T.mean(l_iou)


def dice_loss(logits: Tensor, G_e: np.ndarray, smooth: float = DICE_SMOOTH) -> Tensor:
    x, G_e = _as_maps(logits, G_e)
    p = T.sigmoid(x)
    axes = (1, 2)
    num = T.add(T.mul(T.tsum(T.mul(p, G_e), axis=axes), 2.0), smooth)
    den = T.add(T.tsum(p, axis=axes), G_e.sum(axis=axes) + smooth)
    return T.mean(T.sub(1.0, T.div(num, den)))


@dataclass
class LossReport:
    bce: list[float] = field(default_factory=list)
    iou: list[float] = field(default_factory=list)
    dice: list[float] = field(default_factory=list)
    total: float = 0.0

    def as_dict(self) -> dict:
        return {"bce": self.bce, "iou": self.iou, "dice": self.dice, "total": self.total}


def total_loss(outputs, G: np.ndarray) -> tuple[Tensor, LossReport]:
    """Sum of L_m over every mask map plus Dice over every boundary map.

    Each map is supervised at its own grid: G is resized to the grid and the
    boundary target is the morphological gradient of the resized mask.
    """
    G = np.asarray(G, dtype=np.float64)
    check_binary(G)
    report = LossReport()
    terms = []
    for out in outputs:
        l_bce, l_iou = weighted_bce_iou(out.M, G)
        terms += [l_bce, l_iou]
        report.bce.append(l_bce.item())
        report.iou.append(l_iou.item())
        if out.E is not None:
            G_e = boundary_gt(resize_nearest(G, out.E.shape[2:]))
            l_dice = dice_loss(out.E, G_e)
            terms.append(l_dice)
            report.dice.append(l_dice.item())
    loss = terms[0]
    for t in terms[1:]:
        loss = T.add(loss, t)
    report.total = loss.item()
    return loss, report
