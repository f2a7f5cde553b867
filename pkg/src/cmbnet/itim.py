"""Image-text interaction through a cross-modal correlation matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module, Parameter
from .tensor import ShapeError, Tensor


@dataclass
class InteractionState:
    F_it: Tensor  # (B, HW, N) image-to-text attention
    F_ir: Tensor  # (B, HW, HW) image-to-image attention
    CS: Tensor  # (B, HW, N)
    X: Tensor  # (B, HW, C) L5 as pixel tokens


class ITIM(Module):
    """alpha/beta/gamma act on image pixels, delta/theta on text tokens; all are pointwise affine maps."""

    def __init__(self, channels: int, d_text: int, rng: np.random.Generator, d_qk: int | None = None,
                 zero_values: bool = True):
        d_qk = d_qk or channels
        std = 1.0 / np.sqrt(channels)
        self.alpha = Linear(channels, d_qk, rng, std=std)
        self.beta = Linear(channels, d_qk, rng, std=std)
        self.delta = Linear(d_text, d_qk, rng, std=1.0 / np.sqrt(d_text))
        self.gamma = Linear(channels, channels, rng, zero=zero_values)
        self.theta = Linear(d_text, channels, rng, zero=zero_values)
        self.w1 = Parameter(np.zeros(()))
        self.w2 = Parameter(np.zeros(()))

    def attend(self, L5: Tensor, T_a: Tensor) -> InteractionState:
        if L5.ndim != 4 or T_a.ndim != 3 or L5.shape[0] != T_a.shape[0]:
            raise ShapeError(f"ITIM expects L5 (B, C, H, W) and text (B, N, D); got {L5.shape}, {T_a.shape}")
        B, C = L5.shape[:2]
        X = T.transpose(T.reshape(L5, (B, C, -1)), (0, 2, 1))
        q = self.alpha(X)
        F_it = T.softmax(T.matmul(q, T.swap_last(self.delta(T_a))), axis=-1)
        F_ir = T.softmax(T.matmul(q, T.swap_last(self.beta(X))), axis=-1)
        CS = T.matmul(F_ir, F_it)
        return InteractionState(F_it, F_ir, CS, X)

    def fuse(self, state: InteractionState, L5: Tensor, T_a: Tensor) -> Tensor:
        rF_it = T.add(T.mul(self.w1, state.CS), state.F_it)
        rF_ir = T.add(T.mul(self.w2, T.matmul(state.CS, T.swap_last(state.F_it))), state.F_ir)
        out = T.add(T.add(T.matmul(rF_it, self.theta(T_a)), T.matmul(rF_ir, self.gamma(state.X))), state.X)
        return T.reshape(T.transpose(out, (0, 2, 1)), L5.shape)

    def forward(self, L5: Tensor, T_a: Tensor) -> Tensor:
        return self.fuse(self.attend(L5, T_a), L5, T_a)
