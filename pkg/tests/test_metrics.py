import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import load_fixture
from paits.metrics import (
    MetricReport,
    Pretrained,
    aggregate,
    auprc,
    auroc,
    evaluate_predictions,
    format_table,
    map_at_k,
    rank_items,
    sweep,
    table_csv,
)
from paits.oracles import auroc_pairs_oracle, average_precision_oracle

FN = {"auroc": auroc, "auprc": auprc}


@pytest.mark.parametrize("case", load_fixture("metric_cases.json"), ids=lambda c: c["description"])
def test_fixture_cases(case):
    inp = case["inputs"]
    got = FN[inp["kind"]](inp["scores"], inp["labels"])
    assert abs(got - case["expected"]) <= case["tolerance"]


class TestAuroc:
    def test_hand_case(self):
        assert auroc([0.9, 0.8, 0.3], [1, 0, 1]) == 0.5

    def test_perfect_and_reversed(self):
        y = [0, 0, 1, 1]
        assert auroc([0.1, 0.2, 0.8, 0.9], y) == 1.0
        assert auroc([0.9, 0.8, 0.2, 0.1], y) == 0.0

    def test_single_class_errors(self):
        with pytest.raises(ValueError):
            auroc([0.1, 0.2], [1, 1])

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            auroc([0.1, 0.2], [0, 2])
        with pytest.raises(ValueError):
            auroc([0.1, 0.2, 0.3], [0, 1])

    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=2, max_size=40))
    def test_matches_pair_count(self, pairs):
        scores = [p[0] / 20 for p in pairs]
        labels = [p[1] for p in pairs]
        if len(set(labels)) < 2:
            return
        assert math.isclose(auroc(scores, labels), auroc_pairs_oracle(scores, labels), abs_tol=1e-12)
        # strictly increasing transforms leave it unchanged
        assert math.isclose(auroc(np.exp(3 * np.array(scores)), labels), auroc(scores, labels), abs_tol=1e-12)


class TestAuprc:
    def test_hand_case(self):
        assert math.isclose(auprc([0.9, 0.8, 0.3], [1, 0, 1]), 5 / 6)

    def test_perfect(self):
        assert auprc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_no_positive_errors(self):
        with pytest.raises(ValueError):
            auprc([0.1, 0.2], [0, 0])

    def test_random_scores_near_prevalence(self):
        rng = np.random.default_rng(0)
        y = (rng.random(10_000) < 0.3).astype(float)
        assert abs(auprc(rng.random(10_000), y) - y.mean()) < 0.02

    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=1, max_size=40))
    def test_matches_loop(self, pairs):
        scores = [p[0] / 20 for p in pairs]
        labels = [p[1] for p in pairs]
        if sum(labels) == 0:
            return
        assert math.isclose(auprc(scores, labels), average_precision_oracle(scores, labels), abs_tol=1e-12)


class TestMapAtK:
    def test_hand_case(self):
        assert map_at_k([[1, 2, 3]], [{2}], k=12) == 0.5

    def test_normalized_by_relevant_count(self):
        # two relevant items, both at the top
        assert map_at_k([[5, 7, 1]], [{5, 7}], k=12) == 1.0
        assert math.isclose(map_at_k([[1, 5, 7]], [{5, 7}], k=12), (1 / 2 + 2 / 3) / 2)

    def test_empty_relevant_excluded(self):
        assert map_at_k([[1, 2], [1, 2]], [{1}, set()], k=12) == 1.0
        with pytest.raises(ValueError):
            map_at_k([[1, 2]], [set()], k=12)

    def test_invariant_beyond_k(self):
        head = list(range(12))
        a = map_at_k([head + [20, 21]], [{3, 21}])
        b = map_at_k([head + [21, 20]], [{3, 21}])
        assert a == b

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            map_at_k([[1, 1]], [{1}])

    def test_rank_items_stable(self):
        assert rank_items(np.array([[0.2, 0.5, 0.5, 0.1]]), 3) == [[1, 2, 0]]

    def test_multilabel_evaluation(self):
        probs = np.array([[0.9, 0.1, 0.5], [0.1, 0.2, 0.9]])
        out = evaluate_predictions(probs, [np.array([1, 0, 0]), np.array([0, 1, 0])])
        assert math.isclose(out["map@12"], (1 + 0.5) / 2) and out["selection"] == out["map@12"]


class TestAggregate:
    def test_constant(self):
        assert aggregate([0.5] * 3).formatted() == "0.5000±0.0000"

    def test_sample_std(self):
        r = aggregate([0.4, 0.6])
        assert r.formatted() == "0.5000±0.1414" and not r.single_seed

    def test_single_seed_flagged(self):
        r = aggregate([0.7])
        assert r.single_seed and r.std == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            MetricReport("auroc", [])


@pytest.fixture(scope="module")
def table(small_data, small_exp):
    methods = {"none": Pretrained(random_init=True), "other": Pretrained(random_init=True)}
    return sweep(methods, small_data, fractions=[1.0, 0.5], seeds=(0, 1), cfg=small_exp.train)


class TestSweep:

    def test_shape(self, table):
        assert table.fractions == [0.5, 1.0]
        assert set(table.metrics) == {"auroc", "auprc"}
        assert len(table.rows("auroc")) == 2 * 2
        assert all(len(r.values) == 2 for r in table.reports)

    def test_deterministic_cells(self, table):
        # same init and seeds give identical results for both method names
        assert table.get("none", 0.5, "auroc").values == table.get("other", 0.5, "auroc").values

    def test_format(self, table):
        text = format_table(table, "auroc")
        lines = text.splitlines()
        assert lines[0] == "auroc"
        assert lines[1].split() == ["Method", "50%", "100%"]
        assert len(lines) == 2 + 1 + 2
        assert "±" in lines[3]
        csv_text = table_csv(table)
        assert csv_text.splitlines()[0].startswith("method,fraction,metric")
        assert len(csv_text.splitlines()) == 1 + len(table.reports)

    def test_missing_method(self, small_data, tmp_path):
        with pytest.raises(FileNotFoundError, match="paits"):
            sweep({"paits": Pretrained(checkpoint=str(tmp_path / "nope.ckpt"))}, small_data, [1.0], [0])
        with pytest.raises(FileNotFoundError, match="x"):
            sweep({"x": None}, small_data, [1.0], [0])
