import json

import numpy as np
import pytest

from cmbnet import verify
from cmbnet.cli import main
from cmbnet.config import dump_config, load_config, parse_pairs
from cmbnet.io import read_pnm
from cmbnet.model import RunConfig

TINY_SET = ["channels=4,4,4,4", "c5=4", "width=4", "d_text=6", "n_tokens=3", "d_z=3", "d_c=4", "k=2", "batch=4"]


def test_parse_pairs_types_and_comments():
    vals = parse_pairs(["# run", "lr = 0.01", "channels=4, 8,8,16", "", "ablation=B  # baseline"])
    assert vals == {"lr": 0.01, "channels": (4, 8, 8, 16), "ablation": "B"}


def test_parse_pairs_errors():
    with pytest.raises(KeyError):
        parse_pairs(["nope=1"])
    with pytest.raises(ValueError, match="epochs"):
        parse_pairs(["epochs=ten"])
    with pytest.raises(ValueError, match=":1:"):
        parse_pairs(["epochs"])


def test_config_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("seed=3\nepochs=5\n")
    assert load_config(f, env={}).seed == 3
    assert load_config(f, env={"CMB_SEED": "9"}).seed == 9
    assert load_config(f, {"seed": 11}, env={"CMB_SEED": "9"}).seed == 11
    assert load_config(f, env={}).epochs == 5


def test_dump_round_trip(tmp_path):
    cfg = RunConfig(ablation="B+RED", channels=(2, 4, 6, 8), lr=0.002)
    f = tmp_path / "c.cfg"
    f.write_text(dump_config(cfg))
    assert load_config(f, env={}) == cfg


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    args = ["--n", "8", "--size", "32", "--n-tokens", "3", "--d-text", "6"]
    assert main(["gen-data", "--out", str(root / "train"), "--seed", "1"] + args) == 0
    assert main(["gen-data", "--out", str(root / "val"), "--seed", "2"] + args) == 0
    return root


def _sets():
    return [a for s in TINY_SET for a in ("--set", s)]


def test_train_eval_round_trip(workspace, capsys, monkeypatch):
    monkeypatch.delenv("CMB_SEED", raising=False)
    run = workspace / "run"
    rc = main(["train", "--data", str(workspace / "train"), "--val", str(workspace / "val"), "--out", str(run),
               "--epochs", "1"] + _sets())
    assert rc == 0
    trained = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    lines = (run / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 1 and "val_f1" in json.loads(lines[0])
    assert "epochs=1" in (run / "config.txt").read_text()

    pred = workspace / "pred"
    assert main(["eval", "--checkpoint", str(run / "checkpoint"), "--data", str(workspace / "val"),
                 "--out", str(pred)]) == 0
    scored = json.loads(capsys.readouterr().out)
    assert scored["f1"] == pytest.approx(trained["f1"]) and scored["n"] == 8
    mask = read_pnm(pred / "masks/000000.pgm")
    assert mask.shape == (32, 32) and 0.0 <= mask.min() and mask.max() <= 1.0
    assert np.allclose(mask * 255, np.round(mask * 255))
    assert (pred / "edges/000000.pgm").exists()
    assert len((pred / "per_image.jsonl").read_text().splitlines()) == 8


def test_seeded_runs_give_identical_metrics(workspace, monkeypatch):
    monkeypatch.setenv("CMB_SEED", "5")
    logs = []
    for name in ("s1", "s2"):
        out = workspace / name
        assert main(["train", "--data", str(workspace / "train"), "--out", str(out), "--epochs", "1"] + _sets()) == 0
        logs.append((out / "metrics.jsonl").read_bytes())
        assert "seed=5" in (out / "config.txt").read_text()
    assert logs[0] == logs[1]


def test_bad_data_dir_reports_and_exits_nonzero(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    assert "missing" in capsys.readouterr().err


def test_verify_report_lines_match_registry(capsys):
    assert main(["verify", "softmax_rows"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert {"name", "status", "metric", "tolerance"} <= set(rec) and rec["status"] == "pass"


def test_suites_cover_registry():
    assert verify.SUITES["all"] == list(verify.REGISTRY)
    assert set(verify.SUITES["fast"]) == set(verify.REGISTRY) - {"gradcheck_network"}
    with pytest.raises(KeyError):
        verify.resolve("nope")


def test_fast_suite_reports_every_check():
    small = {"kl_monte_carlo": {"n_pairs": 3, "n_samples": 20_000}, "knn_oracle": {"n_maps": 20},
             "erm_invertibility": {"n": 5}, "ambiguity_bounds": {"n_inputs": 100}}
    results = list(verify.run_suite("fast", small))
    assert [r.name for r in results] == verify.SUITES["fast"]
    assert all(r.passed for r in results), [r.to_json() for r in results if not r.passed]


def test_tampered_psi_fails_invertibility(capsys):
    res = verify.run_check("erm_invertibility", n=3, tamper=True)
    assert res.status == "fail" and res.metric > 1e-3
    assert main(["verify", "erm_invertibility", "--tamper-psi"]) == 1
    assert json.loads(capsys.readouterr().out)["status"] == "fail"


def test_crashing_check_is_reported_as_failure():
    verify.register("_boom", 0.0)(lambda: 1 / 0)
    try:
        res = verify.run_check("_boom")
        assert res.status == "fail" and "ZeroDivisionError" in res.detail["error"]
    finally:
        del verify.REGISTRY["_boom"]
