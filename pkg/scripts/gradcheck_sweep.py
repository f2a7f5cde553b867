"""Full-network finite-difference check across step sizes.

Shows the trade-off behind the frozen step: larger steps straddle more ReLU
and clamp kinks, smaller ones drown in round-off.

    python scripts/gradcheck_sweep.py --steps 1e-5 1e-6 1e-7 --coords 200
"""

import argparse
import json

from cmbnet.verify import network_gradcheck


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=float, nargs="+", default=[1e-5, 1e-6, 1e-7])
    ap.add_argument("--coords", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for step in args.steps:
        rep = network_gradcheck(n_coords=args.coords, step=step, seed=args.seed)
        print(json.dumps(rep), flush=True)


if __name__ == "__main__":
    main()
