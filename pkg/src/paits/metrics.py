"""Classification and ranking metrics, seed aggregation and label-fraction sweeps."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.metrics import average_precision_score, roc_auc_score

from .data import subsample_labels
from .model import load_checkpoint
from .strategy import NULL_STRATEGY, Strategy
from .training import TrainConfig, finetune, predict_proba

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.1, 0.2, 0.5, 1.0)


def _binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    return s, y


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative (ties count 1/2)."""
    s, y = _binary(scores, labels)
    if y.min() == y.max():
        raise ValueError("auroc needs both classes")
    return float(roc_auc_score(y, s))


def auprc(scores, labels) -> float:
    """Average precision: mean over positives of the precision at their rank."""
    s, y = _binary(scores, labels)
    if y.sum() == 0:
        raise ValueError("auprc needs at least one positive")
    return float(average_precision_score(y, s))


def map_at_k(rankings: Sequence[Sequence], relevant: Sequence, k: int = 12) -> float:
    """Mean average precision at ``k``, normalized by ``min(k, |relevant|)``.

    Users whose relevant set is empty are left out of the mean.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(rankings) != len(relevant):
        raise ValueError("rankings and relevant sets differ in length")
    scores = []
    for ranked, rel in zip(rankings, relevant):
        rel = set(rel)
        if not rel:
            continue
        ranked = list(ranked)
        if len(set(ranked)) != len(ranked):
            raise ValueError("rankings must not contain duplicates")
        hits, total = 0, 0.0
        for i, item in enumerate(ranked[:k], start=1):
            if item in rel:
                hits += 1
                total += hits / i
        scores.append(total / min(k, len(rel)))
    if not scores:
        raise ValueError("every user has an empty relevant set")
    return float(np.mean(scores))


def rank_items(probs: np.ndarray, k: int | None = None) -> list[list[int]]:
    """Item indices per row by descending score (lower index first on ties)."""
    order = np.argsort(-np.asarray(probs), axis=1, kind="stable")
    return [list(map(int, row[:k])) for row in order]


def evaluate_predictions(probs, labels) -> dict:
    """Metrics for predicted probabilities.

    Binary: ``auroc``, ``auprc``. Multilabel: ``map@12``. ``selection`` names
    the metric used by metric-based strategy selection.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 2:
        y = np.stack([np.asarray(x, dtype=np.float64) for x in labels])
        rel = [set(np.flatnonzero(row > 0).tolist()) for row in y]
        m = map_at_k(rank_items(probs, 12), rel, 12)
        return {"map@12": m, "selection": m}
    y = np.asarray(labels, dtype=np.float64)
    out = {"auroc": auroc(probs, y), "auprc": auprc(probs, y)}
    out["selection"] = out["auprc"]
    return out


# --------------------------------------------------------------------------
# aggregation


@dataclass
class MetricReport:
    metric: str
    values: list[float]
    method: str = ""
    fraction: float = 1.0
    mean: float = field(init=False)
    std: float = field(init=False)
    single_seed: bool = field(init=False)

    def __post_init__(self):
        if not self.values:
            raise ValueError("MetricReport needs at least one value")
        v = np.asarray(self.values, dtype=np.float64)
        self.values = [float(x) for x in v]
        self.mean = float(v.mean())
        self.single_seed = len(v) == 1
        self.std = 0.0 if self.single_seed else float(v.std(ddof=1))

    def formatted(self) -> str:
        return f"{self.mean:.4f}±{self.std:.4f}"

    def to_dict(self) -> dict:
        return {"metric": self.metric, "method": self.method, "fraction": self.fraction, "values": self.values,
                "mean": self.mean, "std": self.std, "single_seed": self.single_seed}


def aggregate(values: Sequence[float], method: str = "", fraction: float = 1.0, metric: str = "auroc") -> MetricReport:
    return MetricReport(metric, list(values), method, fraction)


# --------------------------------------------------------------------------
# label-fraction sweep


@dataclass
class Pretrained:
    """Pretraining outcome for one method in a sweep.

    ``random_init`` marks the no-pretraining method. Otherwise the encoder
    comes from ``encoder_state`` or, failing that, from ``checkpoint``.
    """

    encoder_state: dict | None = None
    strategy: Strategy = NULL_STRATEGY
    checkpoint: str | None = None
    random_init: bool = False

    def resolve(self, method: str) -> tuple[dict | None, Strategy]:
        if self.random_init:
            return None, self.strategy
        if self.encoder_state is not None:
            return self.encoder_state, self.strategy
        if self.checkpoint and Path(self.checkpoint).exists():
            meta, state = load_checkpoint(self.checkpoint)
            strategy = Strategy.from_dict(meta["strategy"]) if meta.get("strategy") else self.strategy
            return state, strategy
        raise FileNotFoundError(f"missing pretrained checkpoint for method {method!r}")


@dataclass
class SweepTable:
    reports: list[MetricReport]
    fractions: list[float]
    methods: list[str]

    def rows(self, metric: str) -> list[MetricReport]:
        return [r for r in self.reports if r.metric == metric]

    def get(self, method: str, fraction: float, metric: str) -> MetricReport:
        for r in self.reports:
            if r.method == method and r.metric == metric and math.isclose(r.fraction, fraction):
                return r
        raise KeyError((method, fraction, metric))

    @property
    def metrics(self) -> list[str]:
        return list(dict.fromkeys(r.metric for r in self.reports))


def sweep(
    methods: dict,
    data,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    cfg: TrainConfig | None = None,
    *,
    on_cell=None,
) -> SweepTable:
    """Finetune every method per (fraction, seed) and collect test metrics.

    Pretraining is held fixed per method; only the labeled subset and the
    finetuning seed vary. ``methods`` maps a name to a :class:`Pretrained`.
    """
    cfg = cfg or TrainConfig()
    fractions = sorted(float(f) for f in fractions)
    resolved = {}
    for name, entry in methods.items():
        if entry is None:
            raise FileNotFoundError(f"missing pretrained checkpoint for method {name!r}")
        resolved[name] = entry.resolve(name)
    labels = [x.label for x in data.labeled_test]
    cells: dict[tuple[str, float], dict[str, list[float]]] = {}
    for name, (state, strategy) in resolved.items():
        for frac in fractions:
            per_metric: dict[str, list[float]] = {}
            for seed in seeds:
                subset = subsample_labels(data.labeled_train, frac, seed)
                ft = finetune(state, subset, data.labeled_val, cfg, data.ctx, strategy=strategy, seed=seed)
                scores = evaluate_predictions(predict_proba(ft.model, data.labeled_test, data.ctx), labels)
                for k, v in scores.items():
                    if k != "selection":
                        per_metric.setdefault(k, []).append(v)
                if on_cell is not None:
                    on_cell(name, frac, seed, scores, ft)
                log.info("sweep %s fraction=%s seed=%s %s", name, frac, seed, scores)
            cells[(name, frac)] = per_metric
    reports = []
    metric_names = list(dict.fromkeys(k for m in cells.values() for k in m))
    for metric in metric_names:
        for name in resolved:
            for frac in fractions:
                reports.append(MetricReport(metric, cells[(name, frac)][metric], name, frac))
    return SweepTable(reports, fractions, list(resolved))


def _fraction_label(f: float) -> str:
    return f"{100 * f:g}%"


def format_table(table: SweepTable, metric: str) -> str:
    """Aligned plain-text table: one row per method, one column per fraction."""
    header = ["Method"] + [_fraction_label(f) for f in table.fractions]
    rows = [header]
    for method in table.methods:
        rows.append([method] + [table.get(method, f, metric).formatted() for f in table.fractions])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [f"{metric}"]
    for j, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def table_csv(table: SweepTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "fraction", "metric", "mean", "std", "n_seeds", "formatted"])
    for r in table.reports:
        w.writerow([r.method, repr(r.fraction), r.metric, repr(r.mean), repr(r.std), len(r.values), r.formatted()])
    return buf.getvalue()
