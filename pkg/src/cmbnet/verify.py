"""Registered invariant checks with a machine-readable report.

Each check returns a scalar metric and a detail dict; it passes when the
metric is within its tolerance. ``run_suite`` yields one result per check.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import oracle
from . import tensor as T
from .itcam import ITCAM, autocorrelate, kl_diag, knn_neighbors
from .itim import ITIM
from .losses import total_loss
from .model import CMBNet, RunConfig
from .red import ERM
from .tensor import Tensor


@dataclass
class Check:
    name: str
    fn: Callable[..., tuple[float, dict]]
    tolerance: float
    strict: bool = False  # metric < tolerance instead of <=

    def passes(self, metric: float) -> bool:
        if not np.isfinite(metric):
            return False
        return metric < self.tolerance if self.strict else metric <= self.tolerance


@dataclass
class CheckResult:
    name: str
    status: str
    metric: float
    tolerance: float
    seconds: float
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


REGISTRY: dict[str, Check] = {}


def register(name: str, tolerance: float, strict: bool = False):
    def deco(fn):
        REGISTRY[name] = Check(name, fn, tolerance, strict)
        return fn
    return deco


# -- checks ------------------------------------------------------------------------
@register("erm_invertibility", 1e-5)
def erm_invertibility(n: int = 100, channels: int = 8, size: int = 8, seed: int = 0,
                      tamper: bool = False) -> tuple[float, dict]:
    """Max-abs round-trip error over ``n`` random (V, psi) instances.

    ``tamper`` perturbs psi between forward and inverse (negative control).
    """
    worst = 0.0
    for s in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(s)
        erm = ERM(channels, rng)
        for _, p in erm.named_parameters():
            if p.ndim == 1:  # BN affine and biases, so psi is not a pure normaliser
                p.data[...] = rng.normal(0.0, 1.0, p.shape)
        erm.eval()
        V = rng.standard_normal((1, channels, size, size))
        rV, _ = erm(Tensor(V))
        if tamper:
            erm.psi_a.stages[0].conv.weight.data += 0.1
            erm.psi_b.stages[-1].bn.beta.data += 0.1
        worst = max(worst, float(np.abs(erm.invert(rV) - V).max()))
    return worst, {"instances": n, "shape": [channels, size, size], "tampered": tamper}


def network_gradcheck(n_coords: int = 500, step: float = 1e-6, size: int = 32, n_tokens: int = 4,
                      seed: int = 0, config: RunConfig | None = None) -> dict:
    """Analytic vs central-difference gradients of L_all for the FULL network.

    Coordinates are drawn tensor-first (uniform over parameters and the two
    inputs, then uniform within the tensor). A probe whose +step and -step
    evaluations take a different discrete branch (the sign of a clamped ERM
    scale, or a KNN neighbour set) is not a derivative estimate; such probes
    are counted and replaced. "worst" uses |a - n| / max(1, |a|, |n|), which is
    absolute below unit magnitude; "worst_strict" floors the denominator at
    1e-4 instead and so also resolves tiny gradients.
    """
    cfg = config or RunConfig(ablation="FULL", n_tokens=n_tokens)
    rng = np.random.default_rng(seed)
    model = CMBNet(cfg, np.random.default_rng(seed + 1))
    # move the zero-initialised maps off zero so every path carries gradient
    if model.itim is not None:
        for p in (model.itim.gamma.weight, model.itim.theta.weight):
            p.data[...] = rng.normal(0.0, 0.1, p.shape)
        model.itim.w1.data[...] = 0.5
        model.itim.w2.data[...] = -0.3
    image = Tensor(rng.random((2, 3, size, size)), requires_grad=True)
    text = Tensor(rng.standard_normal((2, cfg.n_tokens, cfg.d_text)), requires_grad=True)
    G = np.zeros((2, size, size))
    G[0, size // 6:size // 2, size // 4:3 * size // 4] = 1
    G[1, size // 3:size // 2 + 2, 2:size - 2] = 1

    def objective() -> tuple[Tensor, list[np.ndarray]]:
        with T.record_branches() as branches:
            fw = model(image, text, np.random.default_rng(seed + 2))
            loss = total_loss(fw.outputs, G)[0]
        return loss, branches

    model.zero_grad()
    loss, base = objective()
    loss.backward()
    names = [n for n, _ in model.named_parameters()] + ["image", "text"]
    tensors = model.parameters() + [image, text]
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def value() -> tuple[float, list[np.ndarray]]:
        loss, branches = objective()
        return loss.item(), branches

    def same(a, b):
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

    worst, worst_at, strict, excluded, errs = 0.0, None, 0.0, 0, []
    while len(errs) < n_coords:
        t = int(rng.integers(len(tensors)))
        i = int(rng.integers(tensors[t].size))
        flat = tensors[t].data.reshape(-1)
        old = flat[i]
        flat[i] = old + step
        up, b_up = value()
        flat[i] = old - step
        down, b_down = value()
        flat[i] = old
        if not (same(base, b_up) and same(base, b_down)):
            excluded += 1
            continue
        num = (up - down) / (2.0 * step)
        a = float(analytic[t].reshape(-1)[i])
        err = abs(a - num) / max(abs(a), abs(num), 1.0)
        strict = max(strict, abs(a - num) / max(abs(a), abs(num), 1e-4))
        errs.append(err)
        if err > worst:
            worst, worst_at = err, f"{names[t]}[{i}]"
    return {"worst": worst, "worst_at": worst_at, "worst_strict": strict, "coords": len(errs),
            "excluded": excluded,
            "median": float(np.median(errs)), "step": step}


@register("gradcheck_network", 1e-4, strict=True)
def gradcheck_network(n_coords: int = 500, seed: int = 0) -> tuple[float, dict]:
    rep = network_gradcheck(n_coords=n_coords, seed=seed)
    return rep.pop("worst"), rep


@register("knn_oracle", 0)
def knn_oracle(n_maps: int = 200, max_c: int = 32, seed: int = 0) -> tuple[float, dict]:
    """Index mismatches between the vectorised KNN and the exhaustive loop, k in {1, 5, 10, C-1}."""
    rng = np.random.default_rng(seed)
    mismatches = tried = 0
    for _ in range(n_maps):
        C = int(rng.integers(2, max_c + 1))
        S = autocorrelate(Tensor(rng.standard_normal((C, int(rng.integers(2, 40)))))).data
        # ranks from one full exhaustive sort; the k-prefix of a stable sort is the k-NN set
        full = oracle.knn_exhaustive(S, C - 1)
        for k in sorted({1, 5, 10, C - 1}):
            if k > C - 1:
                continue
            idx, _ = knn_neighbors(S, k)
            tried += 1
            mismatches += int(idx.tolist() != [row[:k] for row in full])
    return float(mismatches), {"maps": n_maps, "comparisons": tried}


@register("kl_monte_carlo", 3.0)
def kl_monte_carlo(n_pairs: int = 50, n_samples: int = 200_000, dim: int = 16,
                   seed: int = 0) -> tuple[float, dict]:
    """Largest |closed - MC| / SE of the symmetric KL over random diagonal-Gaussian pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        mu_p, mu_q = rng.normal(0, 1, dim), rng.normal(0, 1, dim)
        sp, sq = rng.uniform(0.3, 2.0, dim), rng.uniform(0.3, 2.0, dim)
        closed = (kl_diag(Tensor(mu_p), Tensor(sp), Tensor(mu_q), Tensor(sq)).item()
                  + kl_diag(Tensor(mu_q), Tensor(sq), Tensor(mu_p), Tensor(sp)).item())
        e1, s1 = oracle.mc_kl(mu_p, sp, mu_q, sq, n_samples, rng)
        e2, s2 = oracle.mc_kl(mu_q, sq, mu_p, sp, n_samples, rng)
        worst = max(worst, abs(closed - (e1 + e2)) / np.hypot(s1, s2))
    return float(worst), {"pairs": n_pairs, "samples": n_samples, "dim": dim}


@register("ambiguity_bounds", 0)
def ambiguity_bounds(n_inputs: int = 1000, batch: int = 10, seed: int = 0) -> tuple[float, dict]:
    """Violations of a in [0.5, 1) over random inputs, plus a == 0.5 exactly for identical heads."""
    rng = np.random.default_rng(seed)
    violations, lo, hi = 0, 1.0, 0.0
    for _ in range(n_inputs // batch):
        c5, n_tok = int(rng.integers(4, 17)), int(rng.integers(2, 9))
        itcam = ITCAM(c5, n_tok, rng, k=int(rng.integers(1, 11)), d_c=8, d_z=4)
        gain = rng.uniform(1.0, 5.0)
        for head in (itcam.head_v, itcam.head_t):
            head.mu.weight.data *= gain
            head.sigma.weight.data *= gain
        L5 = rng.normal(0, rng.uniform(0.1, 3.0), (batch, c5, 2, 2))
        text = rng.normal(0, rng.uniform(0.1, 3.0), (batch, n_tok, 7))
        a = itcam(Tensor(text), Tensor(L5), rng).a.data
        violations += int(np.sum((a < 0.5) | (a >= 1.0)))
        lo, hi = min(lo, float(a.min())), max(hi, float(a.max()))
    same = ITCAM(6, 6, rng, k=3, share_heads=True)
    L5 = rng.standard_normal((batch, 6, 2, 3))
    a_same = same(Tensor(L5.reshape(batch, 6, 6)), Tensor(L5)).a.data
    violations += int(np.sum(a_same != 0.5))
    return float(violations), {"inputs": n_inputs, "min_a": lo, "max_a": hi,
                               "identical_heads_a": sorted(set(a_same.tolist()))}


@register("itim_residual", 1e-12)
def itim_residual(n_inputs: int = 100, seed: int = 0) -> tuple[float, dict]:
    """max ||O - L5||_inf with zero-initialised value maps."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_inputs):
        C, D, N = int(rng.integers(2, 33)), int(rng.integers(2, 33)), int(rng.integers(1, 9))
        itim = ITIM(C, D, rng)
        itim.w1.data[...] = rng.standard_normal()
        itim.w2.data[...] = rng.standard_normal()
        L5 = rng.normal(0, 3.0, (1, C, int(rng.integers(1, 5)), int(rng.integers(1, 5))))
        O = itim(Tensor(L5), Tensor(rng.standard_normal((1, N, D)))).data
        worst = max(worst, float(np.abs(O - L5).max()))
    return worst, {"inputs": n_inputs}


@register("softmax_rows", 1e-12)
def softmax_rows(n: int = 200, seed: int = 0) -> tuple[float, dict]:
    """Row sums of softmax stay at 1 and no entry is non-finite, even for extreme logits."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        x = rng.normal(0, 10.0 ** rng.uniform(-2, 3), (int(rng.integers(1, 6)), int(rng.integers(1, 40))))
        p = T.softmax(Tensor(x), axis=-1).data
        if not np.all(np.isfinite(p)) or p.shape != x.shape:
            return float("inf"), {"bad_input_scale": float(np.abs(x).max())}
        worst = max(worst, float(np.abs(p.sum(axis=-1) - 1.0).max()))
    return worst, {"inputs": n}


SUITES = {
    "all": list(REGISTRY),
    "fast": [n for n in REGISTRY if n != "gradcheck_network"],
}


def resolve(suite: str) -> list[str]:
    if suite in SUITES:
        return SUITES[suite]
    if suite in REGISTRY:
        return [suite]
    raise KeyError(f"unknown suite or check {suite!r}; choose from {sorted(SUITES) + sorted(REGISTRY)}")


def run_check(name: str, **kwargs) -> CheckResult:
    check = REGISTRY[name]
    t0 = time.perf_counter()
    try:
        metric, detail = check.fn(**kwargs)
    except Exception as exc:  # a crashing check is a failing check
        metric, detail = float("inf"), {"error": f"{type(exc).__name__}: {exc}"}
    status = "pass" if check.passes(metric) else "fail"
    return CheckResult(name, status, float(metric), check.tolerance, round(time.perf_counter() - t0, 3), detail)


def run_suite(suite: str = "all", overrides: dict[str, dict] | None = None) -> Iterator[CheckResult]:
    overrides = overrides or {}
    for name in resolve(suite):
        yield run_check(name, **overrides.get(name, {}))
