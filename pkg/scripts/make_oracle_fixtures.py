"""Regenerate the JSON oracle fixtures under tests/fixtures.

Every expected value is produced by the loop oracles in ``paits.oracles``,
never by the vectorized code under test.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from paits.oracles import (
    OracleCase,
    auroc_pairs_oracle,
    average_precision_oracle,
    dump_cases,
    forecast_loss_oracle,
    info_nce_oracle,
    reconstruction_loss_oracle,
)

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def loss_cases(seed: int, n: int) -> list[OracleCase]:
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(n):
        w, v = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        pred, target = rng.normal(size=(w, v)), rng.normal(size=(w, v))
        mask = (rng.random((w, v)) < 0.6).astype(float)
        count = int(rng.integers(1, 5))
        inputs = {"pred": pred.tolist(), "target": target.tolist(), "mask": mask.tolist(), "count": count}
        cases.append(OracleCase(f"forecast random {i}", {"kind": "forecast", **inputs},
                                forecast_loss_oracle(pred, target, mask, count), 1e-6, "oracle"))
    for i in range(n):
        w, L = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        pred, values = rng.normal(size=(w, L)), rng.normal(size=(w, L))
        lengths = rng.integers(0, L + 1, size=w)
        padding = (np.arange(L)[None, :] < lengths[:, None]).astype(float)
        recon = (rng.random((w, L)) < 0.7).astype(float)
        count = int(rng.integers(1, 5))
        inputs = {"pred": pred.tolist(), "values": values.tolist(), "padding": padding.tolist(),
                  "recon": recon.tolist(), "count": count}
        cases.append(OracleCase(f"reconstruction random {i}", {"kind": "reconstruction", **inputs},
                                reconstruction_loss_oracle(pred, values, padding, recon, count), 1e-6, "oracle"))
    cases.append(OracleCase("forecast hand case", {"kind": "forecast", "pred": [[1, 3]], "target": [[2, 0]],
                                                   "mask": [[1, 0]], "count": 1}, 1.0, 1e-12, "hand"))
    cases.append(OracleCase("reconstruction hand case",
                            {"kind": "reconstruction", "pred": [[1, 2, 9]], "values": [[0, 2, 0]],
                             "padding": [[1, 1, 0]], "recon": [[1, 1, 1]], "count": 1}, 1.0, 1e-12, "hand"))
    return cases


def metric_cases(seed: int, n: int) -> list[OracleCase]:
    rng = np.random.default_rng(seed)
    cases = [
        OracleCase("auroc hand case", {"kind": "auroc", "scores": [0.9, 0.8, 0.3], "labels": [1, 0, 1]},
                   auroc_pairs_oracle([0.9, 0.8, 0.3], [1, 0, 1]), 1e-12, "hand"),
        OracleCase("auprc hand case", {"kind": "auprc", "scores": [0.9, 0.8, 0.3], "labels": [1, 0, 1]},
                   average_precision_oracle([0.9, 0.8, 0.3], [1, 0, 1]), 1e-4, "hand"),
    ]
    for i in range(n):
        size = int(rng.integers(2, 30))
        labels = rng.integers(0, 2, size)
        labels[0], labels[1] = 0, 1
        # coarse scores so that ties occur
        scores = (rng.integers(0, 6, size) / 5.0).tolist()
        labels = labels.tolist()
        cases.append(OracleCase(f"auroc random {i}", {"kind": "auroc", "scores": scores, "labels": labels},
                                auroc_pairs_oracle(scores, labels), 1e-12, "oracle"))
        cases.append(OracleCase(f"auprc random {i}", {"kind": "auprc", "scores": scores, "labels": labels},
                                average_precision_oracle(scores, labels), 1e-12, "oracle"))
    return cases


def info_nce_cases(seed: int, n: int) -> list[OracleCase]:
    rng = np.random.default_rng(seed)
    cases = [OracleCase("orthogonal pair, temperature 1",
                        {"anchor": [[1, 0], [0, 1]], "positive": [[1, 0], [0, 1]], "temperature": 1.0},
                        info_nce_oracle([[1, 0], [0, 1]], [[1, 0], [0, 1]], 1.0), 1e-9, "hand")]
    for i in range(n):
        b, d = int(rng.integers(2, 6)), int(rng.integers(1, 5))
        a, p = rng.normal(size=(b, d)), rng.normal(size=(b, d))
        tau = float(rng.choice([0.1, 0.5, 1.0]))
        cases.append(OracleCase(f"info_nce random {i}", {"anchor": a.tolist(), "positive": p.tolist(), "temperature": tau},
                                info_nce_oracle(a, p, tau), 1e-6, "oracle"))
    return cases


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=FIXTURES)
    ap.add_argument("--seed", type=int, default=20240)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    dump_cases(loss_cases(args.seed, 100), args.out / "loss_cases.json")
    dump_cases(metric_cases(args.seed + 1, 50), args.out / "metric_cases.json")
    dump_cases(info_nce_cases(args.seed + 2, 20), args.out / "info_nce_cases.json")
    print(f"wrote fixtures to {args.out}")


if __name__ == "__main__":
    main()
