import filecmp
import json

import numpy as np
import pytest

from cmbnet.data import gen_dataset, load_dataset, make_sample
from cmbnet.io import read_pnm


def _tree(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_generation_is_byte_identical(tmp_path):
    a = gen_dataset(tmp_path / "a", 10, 7, size=32)
    b = gen_dataset(tmp_path / "b", 10, 7, size=32)
    assert _tree(a) == _tree(b)
    for rel in _tree(a):
        assert filecmp.cmp(a / rel, b / rel, shallow=False), rel


def test_different_seeds_differ(tmp_path):
    a = gen_dataset(tmp_path / "a", 2, 1, size=16)
    b = gen_dataset(tmp_path / "b", 2, 2, size=16)
    assert (a / "images/000000.ppm").read_bytes() != (b / "images/000000.ppm").read_bytes()


def test_coverage_and_split(tmp_path):
    root = gen_dataset(tmp_path / "d", 24, 3, size=32)
    ds = load_dataset(root)
    cover = ds.masks.mean(axis=(1, 2))
    assert np.all((cover >= 0.01) & (cover <= 0.40))
    assert ds.matched.sum() == 12
    manifest = json.loads((root / "manifest.json").read_text())
    assert [e["id"] for e in manifest["samples"]] == ds.ids


def test_loaded_arrays(tmp_path):
    ds = load_dataset(gen_dataset(tmp_path / "d", 4, 5, size=32, n_tokens=3, d_text=6))
    assert ds.images.shape == (4, 3, 32, 32) and ds.masks.shape == (4, 32, 32)
    assert ds.texts.shape == (4, 3, 6) and len(ds) == 4 and ds.size == 32
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    edge = read_pnm(tmp_path / "d/edges/000000.pgm")
    assert set(np.unique(edge)) <= {0.0, 1.0}


def test_sample_kinds_and_tamper_visible():
    kinds = set()
    for seed in range(12):
        s = make_sample(seed, 32, matched=True)
        kinds.add(s.kind)
        assert s.boundary.any()
    assert kinds == {"splice", "copy-move"}


def test_size_must_divide_by_16(tmp_path):
    with pytest.raises(ValueError):
        gen_dataset(tmp_path / "d", 2, 0, size=40)


def test_missing_manifest_names_directory(tmp_path):
    with pytest.raises(FileNotFoundError, match=str(tmp_path)):
        load_dataset(tmp_path)


def test_unwritable_target_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        gen_dataset(blocker / "sub", 2, 0, size=16)
