import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmbnet import tensor as T
from cmbnet.features import (FuseL5, StubVisualEncoder, load_text_features, mask_descriptor, synth_text_features,
                             text_projection, unrelated_mask)
from cmbnet.io import FormatError, save_tensor
from cmbnet.tensor import ShapeError, Tensor

from conftest import check_grads


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2))
def test_pyramid_shapes(hm, wm, batch):
    H, W = 16 * hm, 16 * wm
    ch = (4, 6, 8, 10)
    enc = StubVisualEncoder(ch, np.random.default_rng(0))
    pyr = enc(Tensor(np.random.default_rng(1).random((batch, 3, H, W))))
    for i, c in enumerate(ch, start=1):
        assert pyr[i].shape == (batch, c, H >> i, W >> i)
    L5 = FuseL5(ch, 12, np.random.default_rng(2))(pyr[2], pyr[3], pyr[4])
    assert L5.shape == (batch, 12, H // 16, W // 16)


def test_encoder_rejects_indivisible_size():
    with pytest.raises(ShapeError):
        StubVisualEncoder()(Tensor(np.zeros((1, 3, 24, 32))))


def test_encoder_accepts_single_image():
    pyr = StubVisualEncoder()(Tensor(np.zeros((3, 16, 16))))
    assert pyr[1].shape == (1, 8, 8, 8)


def test_encoder_is_deterministic():
    img = np.random.default_rng(3).random((2, 3, 32, 32))
    a = StubVisualEncoder(rng=np.random.default_rng(7))(Tensor(img))
    b = StubVisualEncoder(rng=np.random.default_rng(7))(Tensor(img))
    for i in range(1, 5):
        assert np.array_equal(a[i].data, b[i].data)


def test_zero_weights_give_zero_pyramid():
    pyr = StubVisualEncoder(zero=True)(Tensor(np.random.default_rng(0).random((1, 3, 32, 32))))
    for i in range(1, 5):
        assert not pyr[i].data.any()


def test_fuse_rejects_misaligned_grids():
    fuse = FuseL5((4, 6, 8, 10), 12, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        fuse(Tensor(np.zeros((1, 6, 8, 8))), Tensor(np.zeros((1, 8, 4, 4))), Tensor(np.zeros((1, 10, 1, 1))))


def test_fuse_gradient(rng):
    fuse = FuseL5((2, 3, 4, 5), 4, np.random.default_rng(0))
    w = rng.standard_normal((2, 4, 2, 2))

    def fn(L2, L3, L4):
        return T.tsum(T.mul(fuse(L2, L3, L4), w))

    check_grads(fn, [rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((2, 4, 4, 4)),
                     rng.standard_normal((2, 5, 2, 2))])


def test_text_round_trip(tmp_path, rng):
    feats = rng.standard_normal((8, 32))
    save_tensor(tmp_path / "t.cmbt", feats)
    assert np.array_equal(load_text_features(tmp_path / "t.cmbt"), feats)


def test_text_rejects_wrong_rank_and_nan(tmp_path):
    save_tensor(tmp_path / "v.cmbt", np.zeros(5))
    with pytest.raises(FormatError):
        load_text_features(tmp_path / "v.cmbt")
    save_tensor(tmp_path / "n.cmbt", np.array([[1.0, np.nan]]))
    with pytest.raises(FormatError):
        load_text_features(tmp_path / "n.cmbt")


def test_mask_descriptor_hand_case():
    m = np.zeros((4, 4))
    m[0:2, 2:4] = 1
    assert np.allclose(mask_descriptor(m), [0.75, 0.25, 0.5, 0.5, 0.5])
    assert np.array_equal(mask_descriptor(np.zeros((4, 4))), [0.5, 0.5, 0.0, 0.0, 0.0])


def test_synth_text_is_seeded_and_shaped():
    m = np.zeros((16, 16))
    m[4:9, 3:12] = 1
    a = synth_text_features(m, True, 5)
    assert a.shape == (8, 32)
    assert np.array_equal(a, synth_text_features(m, True, 5))
    assert not np.array_equal(a, synth_text_features(m, False, 5))
    assert np.array_equal(text_projection(8, 32), text_projection(8, 32))


def test_unrelated_mask_is_scattered():
    m = unrelated_mask(np.random.default_rng(0), 64, 64)
    assert 0 < m.mean() < 0.5
    assert set(np.unique(m)) <= {0.0, 1.0}


def _probe_data(n):
    rng = np.random.default_rng(11)
    X, y = [], []
    for i in range(n):
        m = np.zeros((32, 32))
        cy, cx = rng.integers(6, 26, size=2)
        r = rng.integers(3, 7)
        m[cy - r:cy + r, cx - r:cx + r] = 1
        matched = bool(i % 2)
        X.append(synth_text_features(m, matched, 1000 + i).ravel())
        y.append(matched)
    return np.array(X), np.array(y, dtype=float)


def test_matched_text_is_linearly_separable_from_mismatched():
    """A logistic probe on the flattened features tells matched from mismatched text."""
    X, y = _probe_data(200)
    Xtr, ytr, Xte, yte = X[:150], y[:150], X[150:], y[150:]
    mu, sd = Xtr.mean(0), Xtr.std(0) + 1e-9
    Xtr, Xte = (Xtr - mu) / sd, (Xte - mu) / sd
    w, b = np.zeros(X.shape[1]), 0.0
    for _ in range(2000):
        p = 1.0 / (1.0 + np.exp(-(Xtr @ w + b)))
        w -= 0.1 * (Xtr.T @ (p - ytr) / len(ytr) + 1e-3 * w)
        b -= 0.1 * float(np.mean(p - ytr))
    acc = np.mean(((Xte @ w + b) > 0) == (yte > 0.5))
    assert acc > 0.9


def test_default_pyramid_at_64():
    enc = StubVisualEncoder((8, 16, 24, 32), np.random.default_rng(0))
    pyr = enc(Tensor(np.random.default_rng(1).random((1, 3, 64, 64))))
    assert [pyr[i].shape[1:] for i in range(1, 5)] == [(8, 32, 32), (16, 16, 16), (24, 8, 8), (32, 4, 4)]
    L5 = FuseL5((8, 16, 24, 32), 32, np.random.default_rng(2))(pyr[2], pyr[3], pyr[4])
    assert L5.shape == (1, 32, 4, 4)


def test_fuse_zero_inputs_zero_weights():
    fuse = FuseL5((4, 6, 8, 10), 12, zero=True)
    L5 = fuse(Tensor(np.zeros((2, 6, 8, 8))), Tensor(np.zeros((2, 8, 4, 4))), Tensor(np.zeros((2, 10, 2, 2))))
    assert not L5.data.any()


def test_fuse_passes_gradient_to_every_level(rng):
    fuse = FuseL5((2, 3, 4, 5), 4, np.random.default_rng(0))
    ins = [Tensor(rng.standard_normal(s), requires_grad=True) for s in ((2, 3, 8, 8), (2, 4, 4, 4), (2, 5, 2, 2))]
    T.tsum(T.mul(fuse(*ins), rng.standard_normal((2, 4, 2, 2)))).backward()
    assert all(np.abs(t.grad).sum() > 0 for t in ins)
