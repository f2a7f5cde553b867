"""Command line: gen-data, train, eval, verify, ablate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import dump_config, load_config, parse_pairs
from .data import gen_dataset, load_dataset
from .io import write_pgm
from .model import ABLATIONS
from .train import evaluate, load_checkpoint, predict, train
from .verify import REGISTRY, SUITES, run_suite

def _config(args):
    overrides = parse_pairs(args.set or [])
    for key in ("ablation", "seed", "epochs", "lr", "batch", "threshold"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    return load_config(args.config, overrides)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--threshold", type=float)


def cmd_gen_data(args) -> int:
    out = gen_dataset(args.out, args.n, args.seed, args.size, args.n_tokens, args.d_text)
    print(json.dumps({"out": str(out), "n": args.n, "seed": args.seed, "size": args.size}))
    return 0


def _eval_record(model, data, threshold) -> dict:
    res = evaluate(model, data, threshold)
    rec = {"f1": res.f1, "iou": res.iou}
    gap = res.ambiguity_gap(data.matched)
    if gap is not None:
        rec["ambiguity_gap"] = gap
    return rec


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    data = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    model, _ = train(cfg, data, val, out_dir=out / "checkpoint", log_path=out / "metrics.jsonl")
    if val is not None:
        print(json.dumps({"ablation": cfg.ablation, **_eval_record(model, val, cfg.threshold)}))
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    threshold = args.threshold if args.threshold is not None else model.config.threshold
    data = load_dataset(args.data)
    pred = predict(model, data.images, data.texts)
    res = evaluate(model, data, threshold, prediction=pred)
    if args.out:
        out = Path(args.out)
        for sub in ("masks", "edges"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        with open(out / "per_image.jsonl", "w") as fh:
            for i, sid in enumerate(data.ids):
                write_pgm(out / "masks" / f"{sid}.pgm", pred.mask[i])
                if pred.edge is not None:
                    write_pgm(out / "edges" / f"{sid}.pgm", pred.edge[i])
                rec = {"id": sid, "f1": res.per_image[i][0], "iou": res.per_image[i][1],
                       "matched": bool(data.matched[i])}
                if pred.ambiguity is not None:
                    rec["ambiguity"] = float(pred.ambiguity[i])
                fh.write(json.dumps(rec) + "\n")
    rec = {"f1": res.f1, "iou": res.iou, "threshold": threshold, "n": len(data)}
    gap = res.ambiguity_gap(data.matched)
    if gap is not None:
        rec["ambiguity_gap"] = gap
    print(json.dumps(rec))
    return 0


def cmd_verify(args) -> int:
    overrides = {"erm_invertibility": {"tamper": True}} if args.tamper_psi else {}
    ok = True
    for res in run_suite(args.suite, overrides):
        print(res.to_json(), flush=True)
        ok &= res.passed
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    base = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, val = load_dataset(args.data), load_dataset(args.val)
    with open(out / "ablation.jsonl", "w") as fh:
        for abl in ABLATIONS:
            cfg = base.replace(ablation=abl)
            model, _ = train(cfg, data, val, log_path=out / f"{abl}.metrics.jsonl")
            row = {"ablation": abl, **_eval_record(model, val, cfg.threshold)}
            fh.write(json.dumps(row) + "\n")
            fh.flush()
            print(json.dumps(row), flush=True)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmbnet", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic tampered-image dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--n-tokens", type=int, default=8)
    p.add_argument("--d-text", type=int, default=32)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint and optionally write predicted masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", help="directory for PGM masks/edges and per-image JSONL")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run invariant checks; one JSON line per check")
    p.add_argument("suite", nargs="?", default="all", help=f"{sorted(SUITES)} or one of {sorted(REGISTRY)}")
    p.add_argument("--tamper-psi", action="store_true", help="negative control: perturb psi before inverting")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("ablate", help="train and score all four ablation rows")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(fn=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        return args.fn(args)
    except (OSError, KeyError, ValueError) as exc:
        print(f"cmbnet {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
