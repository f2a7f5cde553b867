import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmbnet import oracle
from cmbnet import tensor as T
from cmbnet.itcam import (ITCAM, GaussianHead, GaussianLatent, ambiguity, autocorrelate, central_feature,
                          kl_diag, knn_neighbors, symmetric_kl)
from cmbnet.nn import Linear
from cmbnet.tensor import ShapeError, Tensor

from conftest import check_grads


def test_autocorrelate_zero_and_hand_case():
    assert np.array_equal(autocorrelate(Tensor(np.zeros((3, 5)))).data, np.zeros((3, 3)))
    S = autocorrelate(Tensor([[0.0, 0.0], [1.0, 1.0]])).data
    assert np.allclose(S, [[0.0, 1.0], [0.0, 1.0]], atol=1e-15)


def test_autocorrelate_rejects_non_2d():
    with pytest.raises(ShapeError):
        autocorrelate(Tensor(np.zeros(4)))


def test_autocorrelate_matches_loop(rng):
    X = rng.standard_normal((4, 6))
    assert np.allclose(autocorrelate(Tensor(X)).data, oracle.autocorrelation(X), atol=1e-12, rtol=0)
    X = rng.standard_normal((3, 4))
    assert np.allclose(autocorrelate(Tensor(X)).data, oracle.loop_eval("autocorrelation", X), atol=1e-12, rtol=0)


def test_knn_hand_case():
    S = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    idx, dist = knn_neighbors(S, 1)
    assert idx[0, 0] == 1 and dist[0, 0] == 1.0
    assert idx[2, 0] == 1 and dist[2, 0] == 2.0


def test_knn_full_neighbourhood_lists_every_other_row(rng):
    S = rng.standard_normal((6, 6))
    idx, _ = knn_neighbors(S, 5)
    for n in range(6):
        assert sorted(idx[n]) == [j for j in range(6) if j != n]


def test_knn_ties_go_to_lower_index():
    S = np.array([[0.0], [1.0], [-1.0], [1.0]])
    idx, _ = knn_neighbors(S, 2)
    assert idx[0].tolist() == [1, 2]
    assert idx[1].tolist() == [3, 0]


@pytest.mark.parametrize("k", [0, 12])
def test_knn_k_out_of_range(k, rng):
    with pytest.raises(ValueError):
        knn_neighbors(rng.standard_normal((12, 12)), k)


def test_knn_matches_exhaustive_sort(rng):
    S = rng.standard_normal((12, 12))
    idx, _ = knn_neighbors(S, 5)
    assert idx.tolist() == oracle.knn_exhaustive(S, 5)


def test_oracle_knn_on_planted_points():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [4.0, 0.0], [0.0, -0.5]])
    # hand ranks for point 0: d(4)=0.5, d(1)=1, d(2)=2, d(3)=4
    assert oracle.knn_exhaustive(pts, 4)[0] == [4, 1, 2, 3]
    assert oracle.knn_exhaustive(pts, 2)[3] == [1, 0]


def _conv(d_in, d_out, w=None, b=None):
    c = Linear(d_in, d_out, np.random.default_rng(0))
    if w is not None:
        c.weight.data[...] = w
    if b is not None:
        c.bias.data[...] = b
    return c


def test_central_feature_degenerate_neighbourhood():
    s = np.array([0.5, -1.0, 2.0])
    S = np.tile(s, (3, 1))
    idx, _ = knn_neighbors(S, 2)
    conv = _conv(6, 6, np.eye(6), np.zeros(6))
    cf = central_feature(Tensor(S[None]), idx[None], conv).data[0]
    assert np.allclose(cf, np.concatenate([np.zeros(3), s]))
    assert np.allclose(np.maximum(cf[:3], cf[3:]), np.maximum(0.0, s))


def test_central_feature_duplicate_neighbours_do_not_change_max(rng):
    S = rng.standard_normal((5, 5))
    idx, _ = knn_neighbors(S, 2)
    doubled = np.concatenate([idx, idx], axis=1)
    conv = _conv(10, 4)
    a = central_feature(Tensor(S[None]), idx[None], conv).data
    b = central_feature(Tensor(S[None]), doubled[None], conv).data
    assert np.array_equal(a, b)


def test_central_feature_matches_loop(rng):
    S = rng.standard_normal((8, 8))
    conv = _conv(16, 5, rng.standard_normal((16, 5)), rng.standard_normal(5))
    idx, _ = knn_neighbors(S, 3)
    got = central_feature(Tensor(S[None]), idx[None], conv).data[0]
    want = oracle.central_feature(S, oracle.knn_exhaustive(S, 3), conv.weight.data, conv.bias.data)
    assert np.allclose(got, want, atol=1e-12, rtol=0)


def test_gaussian_head_zero_weights():
    head = GaussianHead(4, 3, np.random.default_rng(0))
    for lin in (head.mu, head.sigma):
        lin.weight.data[...] = 0.0
    g = head(Tensor(np.ones((1, 4))))
    assert np.array_equal(g.mu.data, np.zeros((1, 3)))
    assert np.allclose(g.sigma.data, math.log(2.0) + 1e-6, atol=1e-15)


def test_gaussian_head_sampling_is_seeded(rng):
    head = GaussianHead(4, 3, rng)
    c = Tensor(rng.standard_normal((2, 4)))
    z1 = head(c, np.random.default_rng(5)).z.data
    z2 = head(c, np.random.default_rng(5)).z.data
    assert np.array_equal(z1, z2)
    g = head(c, np.random.default_rng(5))
    assert np.allclose(g.z.data, g.mu.data + g.sigma.data * g.eps)
    assert np.array_equal(head(c).z.data, head(c).mu.data)


def test_gaussian_head_gradient_with_frozen_noise(rng):
    head = GaussianHead(4, 3, rng, std=0.5)
    c = rng.standard_normal((2, 4))

    def fn(wm, bm, ws, bs):
        head.mu.weight, head.mu.bias, head.sigma.weight, head.sigma.bias = wm, bm, ws, bs
        return T.mean(head(Tensor(c), np.random.default_rng(9)).z)

    params = [head.mu.weight.data.copy(), head.mu.bias.data.copy(),
              head.sigma.weight.data.copy(), head.sigma.bias.data.copy()]
    check_grads(fn, params)


def _latent(mu, sig):
    mu, sig = Tensor(np.atleast_1d(mu)), Tensor(np.atleast_1d(sig))
    return GaussianLatent(mu, sig, mu, np.zeros(mu.shape))


def test_kl_closed_form_cases():
    g = _latent([0.3, -1.0], [0.5, 2.0])
    vt, tv = symmetric_kl(g, g)
    assert vt.item() == 0.0 and tv.item() == 0.0
    vt, tv = symmetric_kl(_latent(1.0, 1.0), _latent(0.0, 1.0))
    assert vt.item() == pytest.approx(0.5, abs=1e-15) and tv.item() == pytest.approx(0.5, abs=1e-15)


def test_kl_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        kl_diag(Tensor([0.0]), Tensor([0.0]), Tensor([0.0]), Tensor([1.0]))


def test_kl_matches_monte_carlo(rng):
    mu_p, mu_q = rng.standard_normal(8), rng.standard_normal(8)
    sig_p, sig_q = rng.uniform(0.5, 1.5, 8), rng.uniform(0.5, 1.5, 8)
    closed = kl_diag(Tensor(mu_p), Tensor(sig_p), Tensor(mu_q), Tensor(sig_q)).item()
    est, se = oracle.mc_kl(mu_p, sig_p, mu_q, sig_q, 200_000, np.random.default_rng(3))
    assert abs(closed - est) <= 3 * se
    assert closed == pytest.approx(oracle.kl_closed(mu_p, sig_p, mu_q, sig_q), abs=1e-12)


def test_mc_kl_self_divergence_is_zero():
    est, se = oracle.mc_kl([0.2, 1.0], [0.7, 1.3], [0.2, 1.0], [0.7, 1.3], 10_000)
    assert abs(est) <= 3 * se + 1e-15


@settings(max_examples=50)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.lists(st.floats(0.1, 3), min_size=3, max_size=3), st.lists(st.floats(0.1, 3), min_size=3, max_size=3))
def test_kl_nonnegative_and_zero_only_at_coincidence(m1, m2, s1, s2):
    vt, tv = symmetric_kl(_latent(m1, s1), _latent(m2, s2))
    assert vt.item() >= -1e-12 and tv.item() >= -1e-12
    if np.allclose(m1, m2) and np.allclose(s1, s2):
        assert vt.item() < 1e-9
    elif vt.item() < 1e-12:
        assert np.allclose(m1, m2, atol=1e-5) and np.allclose(s1, s2, atol=1e-5)


@given(st.floats(0, 20), st.floats(0, 20), st.floats(1.01, 3))
def test_ambiguity_monotone_in_kl(a, b, scale):
    lo = ambiguity(Tensor(a), Tensor(b)).item()
    hi = ambiguity(Tensor(a * scale + 1e-3), Tensor(b * scale + 1e-3)).item()
    assert hi > lo


def test_gate_identical_latents_gives_half(rng):
    itcam = ITCAM(c5=4, n_tokens=4, rng=rng, k=2, share_heads=True)
    L5 = rng.standard_normal((2, 4, 2, 3))
    text = L5.reshape(2, 4, 6)
    res = itcam(Tensor(text), Tensor(L5))
    assert np.array_equal(res.a.data, np.full(2, 0.5))
    assert np.array_equal(res.T_a.data, 0.5 * text)


def test_gate_bounds(rng):
    itcam = ITCAM(c5=6, n_tokens=5, rng=rng, k=3, d_c=8, d_z=4)
    for head in (itcam.head_v, itcam.head_t):
        head.mu.weight.data *= 10.0
    text = rng.standard_normal((3, 5, 7))
    res = itcam(Tensor(text), Tensor(rng.standard_normal((3, 6, 2, 2))))
    assert np.all(res.a.data >= 0.5) and np.all(res.a.data < 1.0)
    for b in range(3):
        assert np.linalg.norm(res.T_a.data[b]) <= 0.5 * np.linalg.norm(text[b]) + 1e-12


def test_gate_end_to_end_gradient(rng):
    itcam = ITCAM(c5=5, n_tokens=4, rng=rng, k=3, d_c=6, d_z=3)
    for head in (itcam.head_v, itcam.head_t):
        head.mu.weight.data *= 30.0
        head.sigma.weight.data *= 30.0
    w = rng.standard_normal((2, 4, 6))

    def fn(L5, text):
        res = itcam(text, L5, np.random.default_rng(0))
        return T.add(T.tsum(T.mul(res.T_a, w)), T.tsum(res.a))

    worst = check_grads(fn, [rng.standard_normal((2, 5, 2, 2)), rng.standard_normal((2, 4, 6))])
    assert worst < 1e-4
