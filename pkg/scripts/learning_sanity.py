"""Train MA-DDPG on several seeds and print final-window margins.

Usage: python scripts/learning_sanity.py [--episodes 2000] [--seeds 0 1 2 3 4] [--algo maddpg]
"""

import argparse
import time

from tobm.config import default_config
from tobm.harness import learning_check, relative_margin


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--algo", default="maddpg")
    args = ap.parse_args()
    cfg = default_config(sim={"episodes": args.episodes, "n_devices": 4}, rl={"algo": args.algo})
    for seed in args.seeds:
        t0 = time.time()
        s, _ = learning_check(cfg, seed)
        print(f"seed {seed}: final {s['final']:.4f} first {s['first']:.4f} random {s['random']:.4f} "
              f"all_local {s['all_local']:.4f} | margins "
              f"{relative_margin(s['final'], s['first']):+.3f} {relative_margin(s['final'], s['random']):+.3f} "
              f"{relative_margin(s['final'], s['all_local']):+.3f} | {time.time() - t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
