"""Gradient-alignment score s over meta-training, first vs last 100 steps per seed.

    python3 scripts/alignment_trend.py --steps 1000 --seeds 1 2 3 4 5 [--set beta_swap=true ...]
"""

import argparse

import numpy as np

from metaprompt.harness import meta_train_for_benchmark
from metaprompt.metalearn import TrainConfig
from metaprompt.pipeline import make_backbone


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="TrainConfig overrides")
    p.add_argument("--window", type=int, default=100)
    args = p.parse_args()
    overrides = dict(kv.split("=", 1) for kv in args.set)
    backbone = make_backbone()
    w, wins = args.window, 0
    print(f"{'seed':>4} {'first':>7} {'last':>7} {'b_first':>7} {'b_last':>7}")
    for seed in args.seeds:
        cfg = TrainConfig.from_mapping(overrides)
        res = meta_train_for_benchmark(backbone, seed, args.steps, cfg)
        s = np.array([m["s"] for m in res.metrics])
        b = np.array([m["b"] for m in res.metrics])
        wins += s[-w:].mean() > s[:w].mean()
        print(f"{seed:>4} {s[:w].mean():7.3f} {s[-w:].mean():7.3f} {b[:w].mean():7.3f} {b[-w:].mean():7.3f}")
    print(f"last > first in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
