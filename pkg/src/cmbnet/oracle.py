"""Brute-force reference implementations.

Everything here is written with Python scalar loops and the ``math`` module so
it shares no code path with :mod:`cmbnet.tensor`. The only exception is the
Monte Carlo KL estimate, which needs 10^5 draws per pair and is vectorised
with plain numpy (it still never touches the tensor engine).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class OracleError(RuntimeError):
    pass


# -- finite differences -----------------------------------------------------------
def rel_error(g: float, g_hat: float) -> float:
    return abs(g - g_hat) / max(1.0, abs(g), abs(g_hat))


def fd_gradient(f: Callable[[], float], params: Sequence[np.ndarray], step: float = 1e-6,
                coords: Sequence[tuple[int, int]] | None = None) -> list[float] | list[np.ndarray]:
    """Central differences of ``f`` w.r.t. entries of ``params`` (perturbed in place).

    With ``coords`` (pairs of parameter index, flat entry index) a list of
    scalars is returned, otherwise a full gradient array per parameter.
    """
    def probe(arr: np.ndarray, flat: int) -> float:
        view = arr.reshape(-1)
        old = view[flat]
        view[flat] = old + step
        up = f()
        view[flat] = old - step
        down = f()
        view[flat] = old
        if not (math.isfinite(up) and math.isfinite(down)):
            raise OracleError(f"non-finite objective while probing entry {flat}")
        return (up - down) / (2.0 * step)

    if coords is not None:
        return [probe(params[p], i) for p, i in coords]
    out = []
    for arr in params:
        g = np.zeros(arr.size)
        for i in range(arr.size):
            g[i] = probe(arr, i)
        out.append(g.reshape(arr.shape))
    return out


# -- small helpers --------------------------------------------------------------------
def _softmax_row(row: list[float]) -> list[float]:
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _affine(vec: list[float], w: list[list[float]], b: list[float]) -> list[float]:
    """vec (I) times w (I x O) plus b (O)."""
    return [b[o] + sum(vec[i] * w[i][o] for i in range(len(vec))) for o in range(len(b))]


def _matmul(a: list[list[float]], b: list[list[float]]) -> list[list[float]]:
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


def _transpose(a: list[list[float]]) -> list[list[float]]:
    return [list(col) for col in zip(*a)]


# -- ambiguity path -----------------------------------------------------------------------
def autocorrelation(X) -> list[list[float]]:
    X = np.asarray(X, dtype=float).tolist()
    P = [_softmax_row(r) for r in X]
    C, M = len(X), len(X[0])
    return [[sum(P[i][m] * X[j][m] for m in range(M)) for j in range(C)] for i in range(C)]


def knn_exhaustive(S, k: int) -> list[list[int]]:
    """For each row, the k nearest other rows by Euclidean distance, ties to the lower index."""
    S = np.asarray(S, dtype=float).tolist()
    C = len(S)
    table = []
    for n in range(C):
        cands = []
        for j in range(C):
            if j == n:
                continue
            d = math.sqrt(sum((S[n][m] - S[j][m]) ** 2 for m in range(len(S[n]))))
            cands.append((d, j))
        cands.sort()
        table.append([j for _, j in cands[:k]])
    return table


def central_feature(S, neighbors: list[list[int]], w, b) -> list[float]:
    S = np.asarray(S, dtype=float).tolist()
    w = np.asarray(w, dtype=float).tolist()
    b = np.asarray(b, dtype=float).tolist()
    best = [-math.inf] * len(b)
    for n, row in enumerate(neighbors):
        for j in row:
            p = [S[n][m] - S[j][m] for m in range(len(S[n]))] + list(S[j])
            y = _affine(p, w, b)
            best = [max(u, v) for u, v in zip(best, y)]
    return best


def kl_closed(mu_p, sig_p, mu_q, sig_q) -> float:
    total = 0.0
    for mp, sp, mq, sq in zip(mu_p, sig_p, mu_q, sig_q):
        total += math.log(sq / sp) + (sp * sp + (mp - mq) ** 2) / (2.0 * sq * sq) - 0.5
    return total


def mc_kl(mu_p, sig_p, mu_q, sig_q, n_samples: int = 200_000,
          rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Monte Carlo KL(p || q): sample mean of log p(x) - log q(x) under p, with its standard error."""
    rng = rng if rng is not None else np.random.default_rng(0)
    mu_p, sig_p, mu_q, sig_q = (np.asarray(v, dtype=float) for v in (mu_p, sig_p, mu_q, sig_q))
    x = mu_p + sig_p * rng.standard_normal((n_samples, mu_p.size))

    def logpdf(x, mu, sig):
        return (-0.5 * ((x - mu) / sig) ** 2 - np.log(sig) - 0.5 * math.log(2 * math.pi)).sum(axis=1)

    r = logpdf(x, mu_p, sig_p) - logpdf(x, mu_q, sig_q)
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(n_samples))


# -- interaction module ------------------------------------------------------------
def itim(L5, T_a, alpha, beta, gamma, delta, theta, w1: float, w2: float) -> list[list[list[float]]]:
    """Index-loop evaluation of the cross-modal fusion for one sample; each map is a (weight, bias) pair."""
    L5 = np.asarray(L5, dtype=float)
    C, H, W = L5.shape
    X = L5.reshape(C, H * W).T.tolist()  # HW tokens of width C
    Tt = np.asarray(T_a, dtype=float).tolist()
    wb = {k: (np.asarray(v[0], float).tolist(), np.asarray(v[1], float).tolist())
          for k, v in dict(alpha=alpha, beta=beta, gamma=gamma, delta=delta, theta=theta).items()}
    q = [_affine(x, *wb["alpha"]) for x in X]
    kb = [_affine(x, *wb["beta"]) for x in X]
    vg = [_affine(x, *wb["gamma"]) for x in X]
    kd = [_affine(t, *wb["delta"]) for t in Tt]
    vt = [_affine(t, *wb["theta"]) for t in Tt]
    dot = lambda u, v: sum(a * b for a, b in zip(u, v))
    F_it = [_softmax_row([dot(qi, kn) for kn in kd]) for qi in q]
    F_ir = [_softmax_row([dot(qi, kj) for kj in kb]) for qi in q]
    CS = _matmul(F_ir, F_it)
    rF_it = [[w1 * CS[i][n] + F_it[i][n] for n in range(len(Tt))] for i in range(len(X))]
    cs_ft = _matmul(CS, _transpose(F_it))
    rF_ir = [[w2 * cs_ft[i][j] + F_ir[i][j] for j in range(len(X))] for i in range(len(X))]
    a = _matmul(rF_it, vt)
    b = _matmul(rF_ir, vg)
    out = [[a[i][c] + b[i][c] + X[i][c] for c in range(C)] for i in range(len(X))]
    return [[[out[y * W + x][c] for x in range(W)] for y in range(H)] for c in range(C)]


# -- convolution stacks -----------------------------------------------------------------
def conv2d(x, w, b, padding: int = 1) -> list:
    """Loop convolution on a batch: x (B, C, H, W), w (O, C, kh, kw), stride 1."""
    x = np.asarray(x, dtype=float).tolist()
    w = np.asarray(w, dtype=float).tolist()
    b = np.asarray(b, dtype=float).tolist()
    B, C, H, W = len(x), len(x[0]), len(x[0][0]), len(x[0][0][0])
    O, kh, kw = len(w), len(w[0][0]), len(w[0][0][0])
    Ho, Wo = H + 2 * padding - kh + 1, W + 2 * padding - kw + 1
    out = [[[[0.0] * Wo for _ in range(Ho)] for _ in range(O)] for _ in range(B)]
    for n in range(B):
        for o in range(O):
            for y in range(Ho):
                for xx in range(Wo):
                    acc = b[o]
                    for c in range(C):
                        for i in range(kh):
                            yi = y + i - padding
                            if not 0 <= yi < H:
                                continue
                            for j in range(kw):
                                xj = xx + j - padding
                                if 0 <= xj < W:
                                    acc += w[o][c][i][j] * x[n][c][yi][xj]
                    out[n][o][y][xx] = acc
    return out


def batchnorm_train(x, gamma, beta, eps: float = 1e-5) -> list:
    x = np.asarray(x, dtype=float).tolist()
    B, C, H, W = len(x), len(x[0]), len(x[0][0]), len(x[0][0][0])
    out = [[[[0.0] * W for _ in range(H)] for _ in range(C)] for _ in range(B)]
    for c in range(C):
        vals = [x[n][c][i][j] for n in range(B) for i in range(H) for j in range(W)]
        mu = sum(vals) / len(vals)
        var = sum((v - mu) ** 2 for v in vals) / len(vals)
        inv = 1.0 / math.sqrt(var + eps)
        for n in range(B):
            for i in range(H):
                for j in range(W):
                    out[n][c][i][j] = (x[n][c][i][j] - mu) * inv * gamma[c] + beta[c]
    return out


def _map4(f, x):
    return [[[[f(v) for v in row] for row in ch] for ch in img] for img in x]


def _zip4(f, x, y):
    return [[[[f(a, b) for a, b in zip(r1, r2)] for r1, r2 in zip(c1, c2)]
             for c1, c2 in zip(i1, i2)] for i1, i2 in zip(x, y)]


def psi(x, stages) -> list:
    """stages: list of dicts with conv weight/bias and BN gamma/beta (training-mode statistics)."""
    for st in stages:
        h = conv2d(x, st["w"], st["b"], padding=1)
        h = _map4(lambda v: max(v, 0.0), h)
        x = batchnorm_train(h, list(st["gamma"]), list(st["beta"]))
    return x


def erm(V, psi_a, psi_b, eps_div: float = 1e-3):
    """Coupling forward on (B, C, H, W); returns (re1, re2) with the sign-preserving clamp."""
    V = np.asarray(V, dtype=float)
    half = V.shape[1] // 2
    e1, e2 = V[:, :half].tolist(), V[:, half:].tolist()
    re2 = _zip4(lambda a, b: a + b, e2, psi(e1, psi_a))
    s = psi(re2, psi_b)
    s = _map4(lambda v: v if abs(v) >= eps_div else (-eps_div if v < 0 else eps_div), s)
    re1 = _zip4(lambda a, g: a * g + g, e1, s)
    return re1, re2


def egrm(U, E, psi_c, psi_d, psi_e):
    """m = U_r * sigmoid(E) + U_r with U_r = psi_c(U + psi_d(psi_e(U))); E is (B, 1, H, W)."""
    U = np.asarray(U, dtype=float).tolist()
    Ur = psi(_zip4(lambda a, b: a + b, U, psi(psi(U, psi_e), psi_d)), psi_c)
    E = np.asarray(E, dtype=float).tolist()
    return [[[[Ur[n][c][i][j] * _sigmoid(E[n][0][i][j]) + Ur[n][c][i][j]
               for j in range(len(Ur[n][c][i]))] for i in range(len(Ur[n][c]))]
             for c in range(len(Ur[n]))] for n in range(len(Ur))]


# -- losses and metrics --------------------------------------------------------------------
def weight_map(G, kernel: int = 15, factor: float = 5.0) -> list[list[float]]:
    G = np.asarray(G, dtype=float).tolist()
    h, w = len(G), len(G[0])
    k = min(kernel, h, w)
    if k % 2 == 0:
        k -= 1
    r = k // 2
    out = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    if 0 <= i + di < h and 0 <= j + dj < w:
                        acc += G[i + di][j + dj]
            out[i][j] = 1.0 + factor * abs(acc / (k * k) - G[i][j])
    return out


def weighted_bce_iou(logits, G) -> tuple[float, float]:
    x = np.asarray(logits, dtype=float).tolist()
    g = np.asarray(G, dtype=float).tolist()
    w = weight_map(G)
    sw = sbce = inter = union = 0.0
    for i in range(len(x)):
        for j in range(len(x[0])):
            xi, gi, wi = x[i][j], g[i][j], w[i][j]
            p = _sigmoid(xi)
            sw += wi
            sbce += wi * (_softplus(xi) - xi * gi)
            inter += wi * p * gi
            union += wi * (p + gi - p * gi)
    return sbce / sw, 1.0 - inter / union


def dice(logits, G_e, smooth: float = 1.0) -> float:
    x = np.asarray(logits, dtype=float).ravel().tolist()
    g = np.asarray(G_e, dtype=float).ravel().tolist()
    p = [_sigmoid(v) for v in x]
    return 1.0 - (2.0 * sum(a * b for a, b in zip(p, g)) + smooth) / (sum(p) + sum(g) + smooth)


def boundary(G) -> list[list[int]]:
    G = np.asarray(G).tolist()
    h, w = len(G), len(G[0])
    out = [[0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            nb = [G[min(max(i + a, 0), h - 1)][min(max(j + b, 0), w - 1)] for a in (-1, 0, 1) for b in (-1, 0, 1)]
            out[i][j] = int(max(nb) - min(nb))
    return out


def confusion(pred, gt) -> tuple[int, int, int]:
    tp = fp = fn = 0
    for p, g in zip(np.asarray(pred).ravel().tolist(), np.asarray(gt).ravel().tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
    return tp, fp, fn


LOOP_EVALUATORS = {
    "autocorrelation": autocorrelation,
    "central_feature": central_feature,
    "itim": itim,
    "erm": erm,
    "egrm": egrm,
    "weighted_bce_iou": weighted_bce_iou,
    "dice": dice,
    "boundary": boundary,
    "confusion": confusion,
}


def loop_eval(name: str, *args, **kwargs):
    """Dispatch to a loop reference by name (see ``LOOP_EVALUATORS``)."""
    try:
        fn = LOOP_EVALUATORS[name]
    except KeyError:
        raise OracleError(f"no loop reference named {name!r}; have {sorted(LOOP_EVALUATORS)}") from None
    return fn(*args, **kwargs)
