"""Synthetic tampered-image datasets written as PPM/PGM/CMBT files plus a JSON manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import synth_text_features
from .io import load_tensor, read_pnm, save_tensor, write_pgm, write_ppm
from .losses import boundary_gt

MIN_COVER, MAX_COVER = 0.01, 0.40
MANIFEST = "manifest.json"


@dataclass
class SyntheticSample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    mask: np.ndarray  # (H, W) binary
    boundary: np.ndarray  # (H, W) binary
    text: np.ndarray  # (N, D_text)
    matched: bool
    kind: str


@dataclass
class Dataset:
    images: np.ndarray  # (n, 3, H, W)
    masks: np.ndarray  # (n, H, W)
    texts: np.ndarray  # (n, N, D_text)
    matched: np.ndarray  # (n,) bool
    ids: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def size(self) -> int:
        return self.images.shape[-1]


def _smooth_field(rng: np.random.Generator, size: int, n_waves: int = 4, amp: float = 0.12) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    field = np.zeros((size, size))
    for _ in range(n_waves):
        fx, fy = rng.uniform(-3, 3, size=2)
        field += np.sin(2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 2 * np.pi))
    return amp * field / np.sqrt(n_waves)


def _texture(rng: np.random.Generator, size: int, noise: float) -> np.ndarray:
    base = rng.uniform(0.3, 0.7, size=3)
    img = np.stack([base[c] + _smooth_field(rng, size) for c in range(3)])
    return img + noise * rng.standard_normal(img.shape)


def _shape_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    while True:
        kind = rng.integers(3)
        cy, cx = rng.uniform(0.2, 0.8, size=2) * size
        ry, rx = rng.uniform(0.08, 0.3, size=2) * size
        if kind == 0:
            m = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        elif kind == 1:
            m = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            ang = rng.uniform(0, 2 * np.pi)
            verts = [(cy + ry * np.sin(ang + t), cx + rx * np.cos(ang + t)) for t in (0, 2.2, 4.2)]
            m = np.ones((size, size), bool)
            for (y0, x0), (y1, x1) in zip(verts, verts[1:] + verts[:1]):
                side = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
                ref = (x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)
                m &= side * np.sign(ref) >= 0
        cover = m.mean()
        if MIN_COVER <= cover <= MAX_COVER:
            return m.astype(np.float64)


def _box_blur(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    H, W = img.shape[1:]
    return sum(p[:, i:i + H, j:j + W] for i in range(3) for j in range(3)) / 9.0


def make_sample(seed: int, size: int, matched: bool, n_tokens: int = 8, d_text: int = 32) -> SyntheticSample:
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0.02, 0.05)
    image = _texture(rng, size, noise)
    mask = _shape_mask(rng, size)
    if rng.random() < 0.5:
        kind = "splice"
        # donor texture with a clearly different noise level
        scale = rng.choice([rng.uniform(0.0, 0.35), rng.uniform(2.2, 3.0)])
        patch = _texture(rng, size, noise * scale)
    else:
        kind = "copy-move"
        dy, dx = rng.integers(size // 6, size // 2, size=2) * rng.choice([-1, 1], size=2)
        # resampled copy: the interpolation wipes out the sensor noise
        patch = _box_blur(np.roll(image, (int(dy), int(dx)), axis=(1, 2)))
    patch = patch + rng.choice([-1, 1]) * rng.uniform(0.03, 0.08)
    image = np.clip(np.where(mask[None] > 0, patch, image), 0.0, 1.0)
    # the stored image is 8-bit
    image = np.rint(image * 255.0) / 255.0
    text = synth_text_features(mask, matched, seed + 1, n_tokens, d_text)
    return SyntheticSample(image, mask, boundary_gt(mask), text, matched, kind)


def gen_dataset(out_dir, n: int, seed: int, size: int = 64, n_tokens: int = 8, d_text: int = 32) -> Path:
    if size % 16:
        raise ValueError(f"size {size} must be divisible by 16")
    out = Path(out_dir)
    for sub in ("images", "masks", "edges", "text"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    order = np.random.default_rng(root.spawn(1)[0]).permutation(n)
    matched = np.zeros(n, bool)
    matched[order[: (n + 1) // 2]] = True
    seeds = [int(s.generate_state(1)[0]) for s in root.spawn(n + 1)[1:]]
    entries = []
    for i in range(n):
        s = make_sample(seeds[i], size, bool(matched[i]), n_tokens, d_text)
        sid = f"{i:06d}"
        paths = {"image": f"images/{sid}.ppm", "mask": f"masks/{sid}.pgm",
                 "edge": f"edges/{sid}.pgm", "text": f"text/{sid}.cmbt"}
        try:
            write_ppm(out / paths["image"], s.image)
            write_pgm(out / paths["mask"], s.mask)
            write_pgm(out / paths["edge"], s.boundary)
            save_tensor(out / paths["text"], s.text)
        except OSError as exc:
            raise OSError(f"writing sample {sid} under {out}: {exc}") from exc
        entries.append({"id": sid, **paths, "matched": bool(s.matched), "kind": s.kind,
                        "cover": round(float(s.mask.mean()), 6)})
    manifest = {"n": n, "seed": seed, "size": size, "n_tokens": n_tokens, "d_text": d_text, "samples": entries}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def load_dataset(path) -> Dataset:
    root = Path(path)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"no {MANIFEST} in {root}") from None
    imgs, masks, texts, matched, ids = [], [], [], [], []
    for e in manifest["samples"]:
        imgs.append(read_pnm(root / e["image"]))
        masks.append((read_pnm(root / e["mask"]) > 0.5).astype(np.float64))
        texts.append(load_tensor(root / e["text"], rank=2))
        matched.append(bool(e["matched"]))
        ids.append(e["id"])
    return Dataset(np.stack(imgs), np.stack(masks), np.stack(texts), np.array(matched), ids)
