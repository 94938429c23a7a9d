"""Print empirical masked fractions and run lengths for every grid mask rate.

Usage: python3 scripts/mask_statistics.py [--intervals 100] [--pool 10000] [--lm 3]
"""
import argparse

import numpy as np

from paits.augment import build_mask_pool, geometric_run_means, sample_mask_bernoulli
from paits.oracles import mask_statistics
from paits.strategy import GRID


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--intervals", type=int, default=100)
    parser.add_argument("--pool", type=int, default=10_000)
    parser.add_argument("--lm", type=float, default=3.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'sampling':<10} {'r':>4} {'fraction':>16} {'masked run':>16} {'kept run':>16} {'target runs':>14}")
    for r in GRID["mask_rate"]:
        if r == 0:
            continue
        bern = mask_statistics(sample_mask_bernoulli(args.intervals * args.pool, r, rng).reshape(args.pool, -1))
        geo = mask_statistics(build_mask_pool(args.intervals, r, args.lm, args.pool, rng).masks)
        lm_m, lm_u = geometric_run_means(r, args.lm)
        for name, s, target in (("random", bern, (1 / (1 - r), 1 / r)), ("geometric", geo, (lm_m, lm_u))):
            print(f"{name:<10} {r:>4} {s.masked_fraction:>9.4f}±{s.fraction_se:.4f} "
                  f"{s.masked_run_mean:>9.3f}±{s.masked_run_se:.3f} {s.unmasked_run_mean:>9.3f}±{s.unmasked_run_se:.3f} "
                  f"{target[0]:>6.2f}/{target[1]:.2f}")


if __name__ == "__main__":
    main()
