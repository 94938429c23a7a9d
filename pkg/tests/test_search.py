import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import paits.search as search
from paits.search import Outcome, derive_seed, run_search, write_summary
from paits.strategy import GRID, Strategy, baseline_strategy, grid_size, sample_strategies, strategy_grid
from paits.training import TrainConfig


class TestGrid:
    def test_cardinality(self):
        assert grid_size() == 6 * 2 * 4 * 2 * 2 * 2 * 2 == 768
        assert len(strategy_grid()) == 768

    def test_full_enumeration(self):
        drawn = sample_strategies(768, 0)
        assert len(set(drawn)) == 768 and set(drawn) == set(strategy_grid())

    def test_deterministic_and_distinct(self):
        a, b = sample_strategies(50, 9), sample_strategies(50, 9)
        assert a == b and len(set(a)) == 50
        assert a != sample_strategies(50, 10)

    def test_too_many(self):
        with pytest.raises(ValueError):
            sample_strategies(769, 0)

    def test_options(self):
        for s in strategy_grid()[:: 37]:
            assert s.weights in GRID["weights"] and s.mask_rate in GRID["mask_rate"]
            spec = s.augmentation(10)
            assert spec.values[2] == 11

    @given(st.integers(0, 767))
    def test_dict_round_trip(self, i):
        s = strategy_grid()[i]
        assert Strategy.from_dict(json.loads(json.dumps(s.to_dict()))) == s

    def test_uniform_marginals(self):
        # each grid point is equally likely to be drawn first
        counts = np.zeros(768)
        index = {s: i for i, s in enumerate(strategy_grid())}
        for seed in range(3000):
            counts[index[sample_strategies(1, seed)[0]]] += 1
        weights = np.array([s.weights for s in strategy_grid()])
        share = counts[(weights == (1.0, 10.0)).all(axis=1)].sum() / counts.sum()
        assert abs(share - 1 / 6) < 3 * math.sqrt((1 / 6) * (5 / 6) / 3000)


class TestBaselines:
    def test_strats(self):
        plan = baseline_strategy("strats")
        s = plan.strategy
        assert plan.objective == "paits"
        assert s.weights == (1.0, 0.0) and s.sigma == 0 and s.mask_rate == 0 and s.finetune_aug == "none"

    def test_names(self):
        assert baseline_strategy("none").objective == "none"
        assert baseline_strategy("tstcc").objective == "tstcc"
        assert baseline_strategy("cl_paits").searched

    def test_unknown(self):
        with pytest.raises(ValueError):
            baseline_strategy("bert")


class TestRunSearch:
    def table_stub(self, losses):
        def evaluate(strategy, index, seed):
            return losses[index]
        return evaluate

    def test_argmin_of_stub_table(self):
        losses = [5.0, 3.0, 4.0, 1.0, 2.0, 1.0, 7.0, 0.5 + 0.6]
        res = run_search(None, 8, 0, evaluate=self.table_stub(losses))
        assert res.best_index == 3 and res.best_loss == 1.0
        assert res.best_strategy == sample_strategies(8, 0)[3]
        assert res.best_trace == [5.0, 3.0, 3.0, 1.0, 1.0, 1.0, 1.0, 1.0]

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=20), st.integers(0, 100))
    def test_trace_non_increasing(self, losses, seed):
        res = run_search(None, len(losses), seed, evaluate=self.table_stub(losses))
        assert all(a >= b for a, b in zip(res.best_trace, res.best_trace[1:]))
        assert res.best_loss == min(losses)
        assert res.best_index == losses.index(min(losses))

    def test_singleton(self):
        res = run_search(None, 1, 4, evaluate=lambda s, i, seed: 2.0)
        assert res.best_strategy == sample_strategies(1, 4)[0]
        best, records = res
        assert best == res.best_strategy and len(records) == 1

    def test_failures_recorded_and_skipped(self):
        def evaluate(strategy, index, seed):
            if index % 2 == 0:
                raise RuntimeError("boom")
            return float(index)
        res = run_search(None, 5, 0, evaluate=evaluate)
        assert res.best_index == 1
        assert [r.status for r in res.records] == ["failed", "ok", "failed", "ok", "failed"]
        assert "boom" in res.records[0].error
        assert math.isinf(res.best_trace[0])

    def test_all_fail(self):
        def evaluate(strategy, index, seed):
            raise RuntimeError("boom")
        with pytest.raises(RuntimeError):
            run_search(None, 3, 0, evaluate=evaluate)

    def test_non_finite_is_failure(self):
        res = run_search(None, 2, 0, evaluate=self.table_stub([math.nan, 1.0]))
        assert res.records[0].status == "failed" and res.best_index == 1

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            run_search(None, 0, 0, evaluate=lambda *a: 1.0)

    def test_metric_selector(self):
        def evaluate(strategy, index, seed):
            return Outcome(val_loss=float(index), val_metric=[0.1, 0.9, 0.5][index])
        res = run_search(None, 3, 0, evaluate=evaluate, selector="metric")
        assert res.best_index == 1

    def test_per_run_seeds_isolated(self):
        seen = []
        run_search(None, 4, 7, evaluate=lambda s, i, seed: seen.append(seed) or 1.0)
        assert seen == [derive_seed(7, i) for i in range(4)]
        assert len(set(seen)) == 4

    def test_summary_is_deterministic(self, tmp_path):
        losses = [3.0, 1.0, 2.0]
        paths = []
        for name in ("a", "b"):
            res = run_search(None, 3, 7, evaluate=self.table_stub(losses))
            for r in res.records:
                r.wall_clock = np.random.random()
                r.checkpoint = str(tmp_path / name / "x.ckpt")
            paths.append(tmp_path / f"{name}.jsonl")
            write_summary(res.records, paths[-1])
        assert paths[0].read_bytes() == paths[1].read_bytes()
        lines = paths[0].read_text().splitlines()
        assert len(lines) == 3 and "wall_clock" not in lines[0]


class _Logged(list):
    """List that reports every element access to a shared log."""

    def __init__(self, items, name, log, stage):
        super().__init__(items)
        self.name, self.log, self.stage = name, log, stage

    def __getitem__(self, i):
        self.log.append((self.name, self.stage[0]))
        return super().__getitem__(i)

    def __iter__(self):
        self.log.append((self.name, self.stage[0]))
        return super().__iter__()


def test_data_access_is_stage_confined(small_data, monkeypatch):
    log, stage = [], ["search"]
    data = small_data
    for name in ("unlabeled_train", "unlabeled_val", "labeled_train", "labeled_val", "labeled_test"):
        data = type(data)(**{**data.__dict__, name: _Logged(getattr(data, name), name, log, stage)})

    def staged(fn, label):
        def wrapper(*args, **kwargs):
            stage[0] = label
            try:
                return fn(*args, **kwargs)
            finally:
                stage[0] = "search"
        return wrapper

    monkeypatch.setattr(search, "pretrain", staged(search.pretrain, "pretrain"))
    monkeypatch.setattr(search, "finetune", staged(search.finetune, "finetune"))
    cfg = TrainConfig(max_epochs=1, finetune_max_epochs=1, pool_size=2000)
    strategies = [Strategy((1, 0)), Strategy((0, 1), 0.1, 0.3, "geometric")]
    res = run_search(data, 2, 0, cfg, strategies=strategies)
    assert all(r.status == "ok" for r in res.records)
    for name, where in log:
        expected = "pretrain" if name.startswith("unlabeled") else "finetune"
        assert where == expected, (name, where)
    assert {n for n, _ in log} == {"unlabeled_train", "unlabeled_val", "labeled_train", "labeled_val"}
