"""Stand-in feature providers: a tiny strided conv encoder and synthetic text features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .io import FormatError, load_tensor
from .nn import BatchNorm, Conv2d, Module
from .tensor import ShapeError, Tensor

# Seed of the fixed text projection shared by every synthesized sample.
TEXT_PROJECTION_SEED = 0x7E57


@dataclass
class FeaturePyramid:
    levels: list[Tensor]  # L1..L4, each (B, C_i, H_i, W_i)
    L5: Tensor | None = None

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i - 1]


class EncoderLevel(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, zero: bool = False):
        self.down = Conv2d(cin, cout, 3, rng, stride=2, padding=1, zero=zero)
        self.conv = Conv2d(cout, cout, 3, rng, zero=zero)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.conv(T.relu(self.down(x))))


class StubVisualEncoder(Module):
    """Four levels of (stride-2 conv3x3 + ReLU, conv3x3 + ReLU)."""

    def __init__(self, channels=(8, 16, 24, 32), rng: np.random.Generator | None = None,
                 in_channels: int = 3, zero: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        cins = (in_channels,) + tuple(channels[:-1])
        self.levels = [EncoderLevel(ci, co, rng, zero) for ci, co in zip(cins, channels)]

    def forward(self, image: Tensor) -> FeaturePyramid:
        if image.ndim == 3:
            image = T.reshape(image, (1,) + image.shape)
        H, W = image.shape[-2:]
        if H % 16 or W % 16:
            raise ShapeError(f"image spatial dims {H}x{W} must be divisible by 16")
        feats, x = [], image
        for level in self.levels:
            x = level(x)
            feats.append(x)
        return FeaturePyramid(feats)


class FuseL5(Module):
    """Bring L2 and L3 onto L4's grid with strided convs, concat, then conv3x3 + ReLU + BN."""

    def __init__(self, channels=(8, 16, 24, 32), c5: int = 32, rng: np.random.Generator | None = None,
                 zero: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        _, c2, c3, c4 = channels
        self.from2 = Conv2d(c2, c2, 4, rng, stride=4, padding=0, zero=zero)
        self.from3 = Conv2d(c3, c3, 2, rng, stride=2, padding=0, zero=zero)
        self.mix = Conv2d(c2 + c3 + c4, c5, 3, rng, zero=zero)
        self.bn = BatchNorm(c5)

    def forward(self, L2: Tensor, L3: Tensor, L4: Tensor) -> Tensor:
        a, b = self.from2(L2), self.from3(L3)
        if a.shape[2:] != L4.shape[2:] or b.shape[2:] != L4.shape[2:]:
            raise ShapeError(f"downsampled grids {a.shape[2:]}, {b.shape[2:]} do not match L4 grid {L4.shape[2:]}")
        return self.bn(T.relu(self.mix(T.concat([a, b, L4], axis=1))))


# -- text features --------------------------------------------------------------
def load_text_features(path) -> np.ndarray:
    """Read an (N, D_text) CMBT file."""
    arr = load_tensor(path, rank=2)
    if arr.shape[0] < 1:
        raise FormatError("text features need at least one token", 6, path)
    if not np.all(np.isfinite(arr)):
        raise FormatError("text features contain non-finite values", 6 + 16, path)
    return arr


def mask_descriptor(mask: np.ndarray) -> np.ndarray:
    """Centroid, bounding-box extent and sqrt(area) of a binary mask, all in [0, 1]."""
    H, W = mask.shape
    ys, xs = np.nonzero(mask > 0.5)
    if len(ys) == 0:
        return np.array([0.5, 0.5, 0.0, 0.0, 0.0])
    return np.array([
        (xs.mean() + 0.5) / W,
        (ys.mean() + 0.5) / H,
        (xs.max() - xs.min() + 1) / W,
        (ys.max() - ys.min() + 1) / H,
        np.sqrt(len(ys) / (H * W)),
    ])


def unrelated_mask(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Scattered blobs across the frame: a region description that fits no single object."""
    yy, xx = np.mgrid[0:height, 0:width]
    mask = np.zeros((height, width))
    for _ in range(rng.integers(5, 10)):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        r = rng.uniform(0.03, 0.07) * min(height, width)
        mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 1.0
    return mask


def text_projection(n_tokens: int, d_text: int) -> np.ndarray:
    rng = np.random.default_rng(TEXT_PROJECTION_SEED)
    return rng.normal(0.0, 1.0, size=(n_tokens, d_text, 6))


def synth_text_features(mask: np.ndarray, matched: bool, seed: int, n_tokens: int = 8,
                        d_text: int = 32, noise: float = 0.05) -> np.ndarray:
    """Synthetic (N, D_text) text features.

    Matched text projects the true mask geometry; mismatched text projects the
    geometry of an unrelated mask drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    if not matched:
        mask = unrelated_mask(rng, *mask.shape)
    desc = np.append(2.0 * mask_descriptor(mask) - 1.0, 1.0)
    feats = text_projection(n_tokens, d_text) @ desc / np.sqrt(desc.size)
    return feats + noise * rng.standard_normal(feats.shape)
