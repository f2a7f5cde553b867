"""Restoration edge decoder: coupling-based edge branch gating a residual mask branch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import BatchNorm, Conv2d, Module, Psi
from .tensor import ShapeError, Tensor

EPS_DIV = 1e-3


class SingularityError(ArithmeticError):
    pass


@dataclass
class CouplingState:
    e1: Tensor
    e2: Tensor
    re1: Tensor
    re2: Tensor
    scale: Tensor  # psi_b(re2) as used in the multiply, after the magnitude clamp


@dataclass
class DecoderBlockOutput:
    E: Tensor | None  # (B, 1, h, w) boundary logits; None for the baseline decoder
    M: Tensor  # (B, 1, h, w) mask logits
    carry: Tensor  # (B, width, h, w)


class ERM(Module):
    """Affine coupling over the two channel halves of V.

    re2 = e2 + psi_a(e1);  re1 = e1 * psi_b(re2) + psi_b(re2)

    With ``clamp`` on, psi_b's output is pushed to |.| >= eps_div in both
    directions, so the inverse is always defined. With it off the raw output
    is used and ``invert`` refuses near-zero divisors.
    """

    def __init__(self, channels: int, rng: np.random.Generator, depth: int = 2, hidden: int | None = None,
                 clamp: bool = True, eps_div: float = EPS_DIV):
        if channels % 2:
            raise ShapeError(f"ERM needs an even channel count, got {channels}")
        half = channels // 2
        self.psi_a = Psi(half, half, rng, depth, hidden)
        self.psi_b = Psi(half, half, rng, depth, hidden)
        self.edge = Conv2d(channels, 1, 1, rng)
        self.clamp = clamp
        self.eps_div = eps_div

    def _scale(self, re2: Tensor) -> Tensor:
        s = self.psi_b(re2)
        return T.clamp_magnitude(s, self.eps_div) if self.clamp else s

    def couple(self, V: Tensor) -> CouplingState:
        if V.ndim != 4 or V.shape[1] % 2:
            raise ShapeError(f"ERM input must be (B, even C, H, W), got {V.shape}")
        half = V.shape[1] // 2
        e1, e2 = T.split(V, [half, half], axis=1)
        re2 = T.add(e2, self.psi_a(e1))
        scale = self._scale(re2)
        re1 = T.add(T.mul(e1, scale), scale)
        return CouplingState(e1, e2, re1, re2, scale)

    def forward(self, V: Tensor) -> tuple[Tensor, Tensor]:
        st = self.couple(V)
        rV = T.concat([st.re1, st.re2], axis=1)
        return rV, self.edge(rV)

    def invert(self, rV) -> np.ndarray:
        rV = rV if isinstance(rV, Tensor) else Tensor(rV)
        half = rV.shape[1] // 2
        re1, re2 = T.split(rV, [half, half], axis=1)
        scale = self._scale(re2).data
        small = np.abs(scale) < self.eps_div
        if small.any():
            pos = tuple(int(i) for i in np.argwhere(small)[0])
            raise SingularityError(f"psi_b(re2) has |value| < {self.eps_div} at (b, c, y, x) = {pos}")
        e1 = (re1.data - scale) / scale
        e2 = re2.data - self.psi_a(Tensor(e1)).data
        return np.concatenate([e1, e2], axis=1)


class EGRM(Module):
    """U_r = psi_c(U + psi_d(psi_e(U))); m = U_r * sigmoid(E) + U_r."""

    def __init__(self, channels: int, rng: np.random.Generator, depth: int = 2):
        self.psi_c = Psi(channels, channels, rng, depth)
        self.psi_d = Psi(channels, channels, rng, depth)
        self.psi_e = Psi(channels, channels, rng, depth)
        self.pred = Conv2d(channels, 1, 1, rng)

    def refine(self, U: Tensor) -> Tensor:
        return self.psi_c(T.add(U, self.psi_d(self.psi_e(U))))

    def forward(self, U: Tensor, E: Tensor) -> tuple[Tensor, Tensor]:
        if E.shape[0] != U.shape[0] or E.shape[2:] != U.shape[2:]:
            raise ShapeError(f"edge map {E.shape} does not match features {U.shape}")
        Ur = self.refine(U)
        m = T.add(T.mul(Ur, T.sigmoid(E)), Ur)
        return self.pred(m), m


class Compress(Module):
    """Channel compression stand-in: conv1x1 -> BN -> ReLU."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.conv = Conv2d(cin, cout, 1, rng)
        self.bn = BatchNorm(cout)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.bn(self.conv(x)))


class DecoderBlock(Module):
    def __init__(self, width: int, rng: np.random.Generator, depth: int = 2):
        self.to_u = Conv2d(2 * width, width, 1, rng)
        self.to_v = Conv2d(2 * width, width, 1, rng)
        self.erm = ERM(width, rng, depth)
        self.egrm = EGRM(width, rng, depth)

    def forward(self, prev: Tensor, skip: Tensor) -> DecoderBlockOutput:
        x = T.concat([prev, skip], axis=1)
        U, V = self.to_u(x), self.to_v(x)
        _, E = self.erm(V)
        M, m = self.egrm(U, E)
        return DecoderBlockOutput(E, M, m)


class PlainBlock(Module):
    """Baseline block without the edge branch: concat -> conv1x1 -> psi -> conv1x1."""

    def __init__(self, width: int, rng: np.random.Generator, depth: int = 2):
        self.to_u = Conv2d(2 * width, width, 1, rng)
        self.psi = Psi(width, width, rng, depth)
        self.pred = Conv2d(width, 1, 1, rng)

    def forward(self, prev: Tensor, skip: Tensor) -> DecoderBlockOutput:
        m = self.psi(self.to_u(T.concat([prev, skip], axis=1)))
        return DecoderBlockOutput(None, self.pred(m), m)


class Decoder(Module):
    """Four blocks from the coarsest grid (paired with L4) to the finest (paired with L1)."""

    def __init__(self, width: int, rng: np.random.Generator, edge_branch: bool = True, depth: int = 2):
        block = DecoderBlock if edge_branch else PlainBlock
        self.blocks = [block(width, rng, depth) for _ in range(4)]

    def forward(self, O: Tensor, skips: list[Tensor]) -> list[DecoderBlockOutput]:
        """``skips`` are the compressed L1..L4; outputs are ordered DB4, DB3, DB2, DB1."""
        outs = []
        prev = O
        for block, skip in zip(self.blocks, reversed(skips)):
            if prev.shape[2:] != skip.shape[2:]:
                prev = T.upsample_nearest(prev, skip.shape[2] // prev.shape[2])
            out = block(prev, skip)
            outs.append(out)
            prev = out.carry
        return outs
