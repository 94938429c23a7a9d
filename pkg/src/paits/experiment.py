"""End-to-end synthetic comparison: search a strategy, then sweep label fractions.

The searched PAITS encoder is compared against finetuning from random
initialization on identical labeled subsets and seeds.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .config import ExperimentConfig, override
from .data import subsample_labels
from .dataio import PreparedData, prepare_data
from .metrics import Pretrained, SweepTable, sweep
from .search import default_evaluator, run_search
from .strategy import NULL_STRATEGY
from .synthetic import generate_synthetic

log = logging.getLogger(__name__)


def acceptance_config(**changes) -> ExperimentConfig:
    """Default synthetic data and model with a desk-scale training budget.

    Pretraining windows start every 8 time units and pretraining runs at
    most 6 epochs so that a budget-8 search plus the 5-seed sweep fits on a
    single CPU core.
    """
    base = {
        "windowing.stride": 8.0,
        "train.max_epochs": 6,
        "search_budget": 8,
        "fractions": [0.1, 1.0],
    }
    base.update(changes)
    return override(ExperimentConfig(), **base)


@dataclass
class ComparisonResult:
    searches: dict  # fraction -> SearchResult
    table: SweepTable
    timings: dict = field(default_factory=dict)

    def gap(self, fraction: float, metric: str = "auroc", method: str = "paits", baseline: str = "none") -> float:
        return self.table.get(method, fraction, metric).mean - self.table.get(baseline, fraction, metric).mean


def run_comparison(exp: ExperimentConfig, data: PreparedData | None = None, *, on_cell=None) -> ComparisonResult:
    """PAITS against no pretraining at every labeled fraction in ``exp.fractions``.

    At each fraction the search sees only that share of the labeled training
    set (drawn with ``exp.search_seed``), so the selected strategy reflects
    the labels actually available. Pretraining is label-free and therefore
    shared between the per-fraction searches.
    """
    timings = {}
    start = time.perf_counter()
    if data is None:
        data = prepare_data(generate_synthetic(exp.synth), exp)
    timings["data"] = time.perf_counter() - start

    cache: dict = {}
    searches, reports = {}, []
    fractions = sorted(float(f) for f in exp.fractions)
    for frac in fractions:
        start = time.perf_counter()
        subset = subsample_labels(data.labeled_train, frac, exp.search_seed)
        search_data = data.with_labeled_train(subset)
        evaluate = default_evaluator(search_data, exp.train, pretrain_cache=cache)
        result = run_search(search_data, exp.search_budget, exp.search_seed, exp.train, evaluate=evaluate)
        searches[frac] = result
        timings[f"search@{frac:g}"] = time.perf_counter() - start
        log.info("fraction %g: best strategy %s (val loss %.4f)", frac, result.best_strategy.name, result.best_loss)

        # a best strategy with null task weights never pretrained, so it is random init too
        paits = Pretrained(result.best_encoder_state, result.best_strategy,
                           random_init=result.best_encoder_state is None)
        start = time.perf_counter()
        reports += sweep({"paits": paits}, data, [frac], exp.seeds, exp.train, on_cell=on_cell).reports
        timings[f"sweep@{frac:g}"] = time.perf_counter() - start

    start = time.perf_counter()
    baseline = sweep({"none": Pretrained(strategy=NULL_STRATEGY, random_init=True)}, data, fractions, exp.seeds,
                     exp.train, on_cell=on_cell)
    timings["sweep_none"] = time.perf_counter() - start
    return ComparisonResult(searches, SweepTable(reports + baseline.reports, fractions, ["paits", "none"]), timings)
