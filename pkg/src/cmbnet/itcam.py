"""Image-text central ambiguity: KNN central features, Gaussian latents, symmetric KL gate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import ShapeError, Tensor

SIGMA_FLOOR = 1e-6


@dataclass
class GaussianLatent:
    mu: Tensor
    sigma: Tensor
    z: Tensor
    eps: np.ndarray


@dataclass
class AmbiguityResult:
    a: Tensor  # (B,)
    T_a: Tensor  # (B, N, D_text)
    kl_vt: Tensor
    kl_tv: Tensor
    central_v: Tensor
    central_t: Tensor
    latent_v: GaussianLatent
    latent_t: GaussianLatent


def autocorrelate(X: Tensor) -> Tensor:
    """S = softmax_rows(X) @ X^T for X of shape (C, M) or (B, C, M)."""
    if X.ndim not in (2, 3):
        raise ShapeError(f"autocorrelate expects a (C, M) or (B, C, M) input, got {X.shape}")
    return T.matmul(T.softmax(X, axis=-1), T.swap_last(X))


def knn_neighbors(S, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the k nearest other rows of S for every row.

    Works on (C, C) or (B, C, C) maps. Ties go to the lower index.
    """
    S = S.data if isinstance(S, Tensor) else np.asarray(S, dtype=np.float64)
    squeeze = S.ndim == 2
    if squeeze:
        S = S[None]
    C = S.shape[1]
    if not 1 <= k <= C - 1:
        raise ValueError(f"k={k} outside [1, {C - 1}] for {C} rows")
    diff = S[:, :, None, :] - S[:, None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    rows = np.arange(C)
    d2[:, rows, rows] = np.inf
    idx = np.argsort(d2, axis=-1, kind="stable")[..., :k]
    T.note_branch(idx)
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=-1))
    if squeeze:
        return idx[0], dist[0]
    return idx, dist


def neighborhood_features(S: Tensor, idx: np.ndarray) -> Tensor:
    """P[b, n, j] = concat(s_n - s_{idx[n, j]}, s_{idx[n, j]}), shape (B, C, k, 2C)."""
    nb = T.gather_rows(S, idx)
    centre = T.reshape(S, (S.shape[0], S.shape[1], 1, S.shape[2]))
    return T.concat([T.sub(centre, nb), nb], axis=-1)


def central_feature(S: Tensor, idx: np.ndarray, conv: Linear) -> Tensor:
    """Pointwise conv over the neighbourhood map followed by global max pooling -> (B, D_c)."""
    return T.global_maxpool(conv(neighborhood_features(S, idx)))


class GaussianHead(Module):
    def __init__(self, d_in: int, d_z: int, rng: np.random.Generator, std: float = 0.01):
        self.mu = Linear(d_in, d_z, rng, std=std)
        self.sigma = Linear(d_in, d_z, rng, std=std)

    def forward(self, c: Tensor, rng: np.random.Generator | None = None) -> GaussianLatent:
        mu = self.mu(c)
        sigma = T.add(T.softplus(self.sigma(c)), SIGMA_FLOOR)
        # eval mode (rng=None) pins the sample to the mean
        eps = rng.standard_normal(mu.shape) if rng is not None else np.zeros(mu.shape)
        z = T.add(mu, T.mul(sigma, Tensor(eps)))
        return GaussianLatent(mu, sigma, z, eps)


def kl_diag(mu_p: Tensor, sig_p: Tensor, mu_q: Tensor, sig_q: Tensor) -> Tensor:
    """KL(p || q) for diagonal Gaussians, summed over the last axis."""
    if mu_p.shape != mu_q.shape:
        raise ShapeError(f"latent widths differ: {mu_p.shape} vs {mu_q.shape}")
    if np.any(sig_p.data <= 0) or np.any(sig_q.data <= 0):
        raise ValueError("sigma must be strictly positive")
    dm = T.sub(mu_p, mu_q)
    ratio = T.div(T.add(T.mul(sig_p, sig_p), T.mul(dm, dm)), T.mul(T.mul(sig_q, sig_q), 2.0))
    term = T.sub(T.add(T.sub(T.log(sig_q), T.log(sig_p)), ratio), 0.5)
    return T.tsum(term, axis=-1)


def symmetric_kl(gv: GaussianLatent, gt: GaussianLatent) -> tuple[Tensor, Tensor]:
    return kl_diag(gv.mu, gv.sigma, gt.mu, gt.sigma), kl_diag(gt.mu, gt.sigma, gv.mu, gv.sigma)


def ambiguity(kl_vt: Tensor, kl_tv: Tensor) -> Tensor:
    return T.sigmoid(T.mul(T.add(kl_vt, kl_tv), 0.5))


class ITCAM(Module):
    """Scores image-text disagreement and scales the text features by (1 - a)."""

    def __init__(self, c5: int, n_tokens: int, rng: np.random.Generator, k: int = 10,
                 d_c: int = 32, d_z: int = 16, share_heads: bool = False):
        self.k = k
        self.conv_v = Linear(2 * c5, d_c, rng)
        self.head_v = GaussianHead(d_c, d_z, rng)
        if share_heads:
            if c5 != n_tokens:
                raise ShapeError("shared heads need as many text tokens as image channels")
            self.conv_t, self.head_t = self.conv_v, self.head_v
        else:
            self.conv_t = Linear(2 * n_tokens, d_c, rng)
            self.head_t = GaussianHead(d_c, d_z, rng)

    def central(self, X: Tensor, conv: Linear) -> Tensor:
        S = autocorrelate(X)
        k = min(self.k, S.shape[-1] - 1)
        idx, _ = knn_neighbors(S, k)
        return central_feature(S, idx, conv)

    def forward(self, text: Tensor, L5: Tensor, rng: np.random.Generator | None = None) -> AmbiguityResult:
        B, C = L5.shape[:2]
        X = T.reshape(L5, (B, C, -1))
        cv = self.central(X, self.conv_v)
        ct = self.central(text, self.conv_t)
        gv = self.head_v(cv, rng)
        gt = self.head_t(ct, rng)
        kl_vt, kl_tv = symmetric_kl(gv, gt)
        a = ambiguity(kl_vt, kl_tv)
        T_a = T.mul(text, T.reshape(T.sub(1.0, a), (B, 1, 1)))
        return AmbiguityResult(a, T_a, kl_vt, kl_tv, cv, ct, gv, gt)
