"""Search a PAITS strategy on synthetic data and compare it with no pretraining.

Usage: python3 scripts/run_comparison.py [--set key=value ...] [--csv out.csv]
"""
import argparse
import json
import logging
import time

import torch

from paits.cli import _parse_value
from paits.experiment import acceptance_config, run_comparison
from paits.metrics import format_table, table_csv


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--csv")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(1)
    changes = dict(item.split("=", 1) for item in args.set)
    exp = acceptance_config(**{k: _parse_value(v) for k, v in changes.items()})
    start = time.perf_counter()

    def on_cell(method, fraction, seed, scores, ft):
        print(f"  {method} {fraction:g} seed={seed} auroc={scores['auroc']:.4f} "
              f"[{time.perf_counter() - start:.0f}s]", flush=True)

    res = run_comparison(exp, on_cell=on_cell)
    for frac, search in res.searches.items():
        print(f"best strategy at {100 * frac:g}% labels:", json.dumps(search.best_strategy.to_dict(), sort_keys=True))
    for metric in res.table.metrics:
        print(format_table(res.table, metric))
        print()
    for f in res.table.fractions:
        print(f"auroc gap at {100 * f:g}% labels: {res.gap(f):+.4f}")
    print("timings:", {k: round(v, 1) for k, v in res.timings.items()})
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(table_csv(res.table))


if __name__ == "__main__":
    main()
