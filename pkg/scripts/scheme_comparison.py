"""Print seed-averaged consensus comparisons as plain tables.

Usage: python scripts/scheme_comparison.py [--config cfg.yaml] [--seeds 10] [--workers 1]

Mining utility and round latency per scheme, then the throughput sweep
(tx/s) over loads 10..200.
"""

import argparse
from collections import defaultdict

import numpy as np

from tobm.config import default_config, parse_config
from tobm.harness import run_comparison

SCHEMES = ["por", "dpos", "pow", "none"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--episodes", type=int, default=2)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = parse_config(args.config) if args.config else default_config()
    loads = list(range(10, 201, 10))
    summary, sweep = run_comparison(cfg, SCHEMES, range(args.seeds), args.episodes, loads,
                                    workers=args.workers)

    print(f"{'scheme':8s} {'J_mine':>8s} {'latency_s':>10s} {'J_sys':>8s}")
    for s in SCHEMES:
        rows = [r for r in summary if r["scheme"] == s]
        print(f"{s:8s} {np.mean([r['mean_j_mine'] for r in rows]):8.3f} "
              f"{np.mean([r['consensus_latency'] for r in rows]):10.4f} "
              f"{np.mean([r['mean_j_sys'] for r in rows]):8.3f}")

    tps = defaultdict(list)
    for r in sweep:
        tps[r["scheme"], r["load"]].append(r["tps"])
    shown = [s for s in SCHEMES if s != "none"]
    print("\nload " + " ".join(f"{s:>7s}" for s in shown))
    for load in loads:
        print(f"{load:4d} " + " ".join(f"{np.mean(tps[s, load]):7.2f}" for s in shown))


if __name__ == "__main__":
    main()
