"""Train the four ablation rows on the fixed desk splits and print the comparison table.

    python scripts/desk_ablation.py --root runs/desk [--rows FULL B] [--epochs 20]

Per-epoch logs land in <root>/logs/<row>.jsonl, the table in <root>/ablation.md.
"""

import argparse
import json
import logging
from pathlib import Path

from cmbnet.experiments import ablation_table, desk_splits, run_row
from cmbnet.model import ABLATIONS, RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--root", default="runs/desk")
    ap.add_argument("--rows", nargs="+", choices=ABLATIONS, default=list(ABLATIONS))
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    root = Path(args.root)
    (root / "logs").mkdir(parents=True, exist_ok=True)
    train_set, test_set = desk_splits(root / "data")
    rows = []
    for abl in args.rows:
        cfg = RunConfig(ablation=abl, seed=args.seed, epochs=args.epochs)
        row = run_row(cfg, train_set, test_set, log_path=root / "logs" / f"{abl}.jsonl")
        rows.append(row)
        print(json.dumps(row.as_dict()), flush=True)
    table = ablation_table(rows)
    (root / "ablation.md").write_text(table + "\n")
    print(table)


if __name__ == "__main__":
    main()
