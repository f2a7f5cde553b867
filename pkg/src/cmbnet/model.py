"""Network assembly and the run configuration, including the ablation variants."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .features import FuseL5, StubVisualEncoder
from .itcam import ITCAM, AmbiguityResult
from .itim import ITIM
from .nn import Module
from .red import Compress, Decoder, DecoderBlockOutput
from .tensor import Tensor

ABLATIONS = ("B", "B+RED", "B+RED+ITIM", "FULL")


@dataclass
class RunConfig:
    ablation: str = "FULL"
    k: int = 10
    d_text: int = 32
    n_tokens: int = 8
    d_z: int = 16
    d_c: int = 32
    channels: tuple[int, ...] = (8, 16, 24, 32)
    c5: int = 32
    width: int = 32
    psi_depth: int = 2
    seed: int = 1
    epochs: int = 20
    lr: float = 1e-3
    batch: int = 8
    threshold: float = 0.5

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 4:
            raise ValueError("channels needs four entries")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    @property
    def use_red(self) -> bool:
        return self.ablation != "B"

    @property
    def use_itim(self) -> bool:
        return self.ablation in ("B+RED+ITIM", "FULL")

    @property
    def use_itcam(self) -> bool:
        return self.ablation == "FULL"

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        return d


# Paper-scale widths: 768-wide text features and a 64-channel decoder.
PAPER_PRESET = {"d_text": 768, "width": 64}


@dataclass
class Forward:
    outputs: list[DecoderBlockOutput]  # DB4 .. DB1
    L5: Tensor
    O: Tensor
    ambiguity: AmbiguityResult | None = None
    read_ambiguity: bool = field(default=False)

    @property
    def final(self) -> Tensor:
        return self.outputs[-1].M


class CMBNet(Module):
    def __init__(self, config: RunConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.config = config
        ch = config.channels
        self.encoder = StubVisualEncoder(ch, rng)
        self.fuse = FuseL5(ch, config.c5, rng)
        self.itcam = ITCAM(config.c5, config.n_tokens, rng, config.k, config.d_c, config.d_z) \
            if config.use_itcam else None
        self.itim = ITIM(config.c5, config.d_text, rng) if config.use_itim else None
        self.squeeze = [Compress(c, config.width, rng) for c in ch]
        self.squeeze_o = Compress(config.c5, config.width, rng)
        self.decoder = Decoder(config.width, rng, edge_branch=config.use_red, depth=config.psi_depth)

    def forward(self, image, text=None, rng: np.random.Generator | None = None) -> Forward:
        """``rng`` draws the latent noise in training; None pins the latents to their means."""
        image = image if isinstance(image, Tensor) else Tensor(image)
        pyr = self.encoder(image)
        L5 = self.fuse(pyr[2], pyr[3], pyr[4])
        amb = None
        O = L5
        if self.itim is not None:
            text = text if isinstance(text, Tensor) else Tensor(text)
            if self.itcam is not None:
                amb = self.itcam(text, L5, rng)
                text = amb.T_a
            O = self.itim(L5, text)
        skips = [sq(level) for sq, level in zip(self.squeeze, pyr.levels)]
        outs = self.decoder(self.squeeze_o(O), skips)
        return Forward(outs, L5, O, amb, read_ambiguity=amb is not None)
