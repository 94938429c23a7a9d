"""Random search over pretraining strategies.

For each sampled strategy: pretrain on the unlabeled splits, finetune on the
labeled splits, keep the strategy with the lowest validation supervised loss
(first one wins ties).
"""
from __future__ import annotations

import json
import logging
import math
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .metrics import evaluate_predictions
from .model import build_model
from .strategy import Strategy, sample_strategies
from .training import TrainConfig, finetune, predict_proba, pretrain

log = logging.getLogger(__name__)


def derive_seed(master: int, index: int) -> int:
    """Independent per-run seed from the master seed and the run index."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


@dataclass
class Outcome:
    val_loss: float
    val_metric: float | None = None
    pretrain_history: dict | None = None
    finetune_history: dict | None = None
    encoder_state: dict | None = None


@dataclass
class RunRecord:
    index: int
    strategy: dict
    seed: int
    val_loss: float | None = None
    val_metric: float | None = None
    status: str = "ok"
    error: str | None = None
    pretrain_history: dict | None = None
    finetune_history: dict | None = None
    checkpoint: str | None = None
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_line(self) -> str:
        """Deterministic one-line summary (no timings or paths)."""
        d = {k: v for k, v in asdict(self).items() if k not in ("wall_clock", "checkpoint", "error")}
        d["error"] = None if self.error is None else self.error.splitlines()[-1]
        return json.dumps(d, sort_keys=True)


@dataclass
class SearchResult:
    best_strategy: Strategy | None
    best_loss: float
    best_index: int
    records: list[RunRecord]
    best_trace: list[float] = field(default_factory=list)
    best_encoder_state: dict | None = None

    def __iter__(self):
        # allows ``best, records = run_search(...)``
        yield self.best_strategy
        yield self.records


def default_evaluator(
    data,
    cfg: TrainConfig,
    objective: str = "paits",
    with_metric: bool = False,
    pretrain_cache: dict | None = None,
) -> Callable[[Strategy, int, int], Outcome]:
    """Pretrain on ``data.unlabeled_*`` then finetune on ``data.labeled_*``.

    The validation metric is only computed when ``with_metric`` is set.
    Pretraining never sees labels, so searches that differ only in their
    labeled sets can share a ``pretrain_cache`` keyed by strategy and seed.
    """

    def evaluate(strategy: Strategy, index: int, seed: int) -> Outcome:
        key = (strategy, seed, objective)
        if pretrain_cache is not None and key in pretrain_cache:
            history, state = pretrain_cache[key]
        else:
            model = build_model(data.ctx.encoder, seed)
            pre = pretrain(model, data.unlabeled_train, data.unlabeled_val, strategy, cfg, data.ctx,
                           objective=objective, seed=seed)
            history, state = pre.history.to_dict(), None if pre.history.skipped else pre.encoder_state()
            if pretrain_cache is not None:
                pretrain_cache[key] = (history, state)
        ft = finetune(state, data.labeled_train, data.labeled_val, cfg, data.ctx, strategy=strategy, seed=seed)
        metric = None
        if with_metric:
            probs = predict_proba(ft.model, data.labeled_val, data.ctx)
            metric = evaluate_predictions(probs, [x.label for x in data.labeled_val])["selection"]
        return Outcome(ft.val_loss, metric, history, ft.history.to_dict(), state)

    return evaluate


def run_search(
    data,
    n: int,
    seed: int,
    cfg: TrainConfig | None = None,
    *,
    evaluate: Callable[[Strategy, int, int], Outcome | float] | None = None,
    objective: str = "paits",
    selector: str = "loss",
    strategies: list[Strategy] | None = None,
    on_record: Callable[[RunRecord], None] | None = None,
) -> SearchResult:
    """Sample ``n`` distinct strategies and keep the best one.

    ``selector="loss"`` picks the lowest validation loss; ``"metric"`` the
    highest validation metric (AUPRC, or MAP@12 in multilabel mode).
    ``evaluate`` may be replaced by a stub returning a float loss.
    """
    if n < 1:
        raise ValueError("search budget must be >= 1")
    if selector not in ("loss", "metric"):
        raise ValueError(f"unknown selector {selector!r}")
    if evaluate is None:
        evaluate = default_evaluator(data, cfg or TrainConfig(), objective, selector == "metric")
    strategies = sample_strategies(n, seed) if strategies is None else list(strategies)[:n]

    best, best_score, best_index, best_state = None, math.inf, -1, None
    records, trace = [], []
    for i, strategy in enumerate(strategies):
        run_seed = derive_seed(seed, i)
        rec = RunRecord(i, strategy.to_dict(), run_seed)
        start = time.perf_counter()
        try:
            out = evaluate(strategy, i, run_seed)
            if not isinstance(out, Outcome):
                out = Outcome(float(out))
            rec.val_loss, rec.val_metric = float(out.val_loss), out.val_metric
            rec.pretrain_history, rec.finetune_history = out.pretrain_history, out.finetune_history
            score = rec.val_loss if selector == "loss" else -float(out.val_metric)
            if not math.isfinite(score):
                raise FloatingPointError("non-finite validation score")
            if score < best_score:
                best, best_score, best_index, best_state = strategy, score, i, out.encoder_state
        except Exception as exc:  # a failed run is recorded and skipped
            rec.status = "failed"
            rec.error = "".join(traceback.format_exception_only(type(exc), exc)).strip()
            log.warning("strategy %d (%s) failed: %s", i, strategy.name, rec.error)
        rec.wall_clock = time.perf_counter() - start
        records.append(rec)
        trace.append(best_score if selector == "loss" else -best_score)
        if on_record is not None:
            on_record(rec)
        log.info("strategy %d/%d %s val_loss=%s", i + 1, len(strategies), strategy.name, rec.val_loss)

    if best is None:
        raise RuntimeError("every strategy in the search failed")
    best_loss = records[best_index].val_loss
    return SearchResult(best, best_loss, best_index, records, trace, best_state)


def write_summary(records: list[RunRecord], path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.summary_line() + "\n")
