import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ckge.evaluation import (
    MetricsReport,
    continual_evaluate,
    evaluation_filter,
    link_prediction_metrics,
    metrics_from_ranks,
    rank_query,
)
from ckge.kg import TripleIndex, as_array
from ckge.synthetic import SyntheticSpec, generate_synthetic_sequence
from oracles import brute_force_metrics, brute_force_ranks


def toy_kg(seed, n=5, d=3, integer=False):
    rng = np.random.default_rng(seed)
    ent = rng.integers(-2, 3, size=(n, d)).astype(float) if integer else rng.normal(size=(n, d))
    rel = rng.integers(-1, 2, size=(2, d)).astype(float) if integer else rng.normal(size=(2, d))
    test = np.unique(np.column_stack([rng.integers(n, size=6), rng.integers(2, size=6), rng.integers(n, size=6)]),
                     axis=0)
    extra = np.column_stack([rng.integers(n, size=6), rng.integers(2, size=6), rng.integers(n, size=6)])
    known = np.unique(np.concatenate([test, extra]), axis=0)
    return ent, rel, test, known


class TestRankQuery:
    def test_unique_best(self):
        ent = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
        rel = np.array([[1.0, 0.0]])
        assert rank_query((0, 0, 1), "tail", ent, rel, protocol="raw") == 1

    def test_all_identical_is_pessimistic(self):
        ent = np.ones((7, 3))
        rel = np.zeros((1, 3))
        assert rank_query((0, 0, 3), "tail", ent, rel, protocol="raw") == 7
        assert rank_query((0, 0, 3), "head", ent, rel, protocol="raw") == 7

    def test_filter_removes_other_true_answers(self):
        ent = np.array([[0.0], [1.0], [1.1], [3.0]])
        rel = np.array([[1.0]])
        known = TripleIndex(as_array([(0, 0, 1), (0, 0, 2)]), 4, 1)
        assert rank_query((0, 0, 2), "tail", ent, rel, protocol="raw") == 2
        assert rank_query((0, 0, 2), "tail", ent, rel, known=known, protocol="filtered") == 1

    def test_gold_outside_candidates(self):
        with pytest.raises(RuntimeError):
            rank_query((0, 0, 3), "tail", np.zeros((4, 2)), np.zeros((1, 2)), n_candidates=3, protocol="raw")

    @pytest.mark.parametrize("integer", [False, True])
    def test_toy_oracle(self, integer):
        for seed in range(10):
            ent, rel, test, known = toy_kg(seed, integer=integer)
            idx = TripleIndex(known, 5, 2)
            for protocol, filt in (("raw", None), ("filtered", known)):
                got = [rank_query(tuple(t), "tail", ent, rel, known=idx, protocol=protocol) for t in test]
                got += [rank_query(tuple(t), "head", ent, rel, known=idx, protocol=protocol) for t in test]
                assert got == brute_force_ranks(test, ent, rel, 5, filt)

    @given(st.integers(0, 2**31), st.sampled_from([0.25, 0.5, 2.0, 8.0]), st.floats(-5, 5))
    def test_monotone_transform_invariance(self, seed, scale, shift):
        """Scaling every vector scales every score; translating entities leaves scores unchanged."""
        ent, rel, test, known = toy_kg(seed, n=8)
        idx = TripleIndex(known, 8, 2)
        base = link_prediction_metrics(test, ent, rel, known=idx, return_ranks=True)[1]
        scaled = link_prediction_metrics(test, ent * scale, rel * scale, known=idx, return_ranks=True)[1]
        shifted = link_prediction_metrics(test, ent + shift, rel, known=idx, return_ranks=True)[1]
        np.testing.assert_array_equal(base, scaled)
        np.testing.assert_array_equal(base, shifted)

    @given(st.integers(0, 2**31))
    def test_filtered_never_worse(self, seed):
        ent, rel, test, known = toy_kg(seed, n=10, integer=bool(seed % 2))
        idx = TripleIndex(known, 10, 2)
        _, raw = link_prediction_metrics(test, ent, rel, known=idx, protocol="raw", return_ranks=True)
        _, filt = link_prediction_metrics(test, ent, rel, known=idx, protocol="filtered", return_ranks=True)
        assert np.all(filt <= raw)


class TestMetrics:
    def test_all_first(self):
        assert metrics_from_ranks([1, 1, 1]) == {"MRR": 1.0, "Hits@1": 1.0, "Hits@3": 1.0, "Hits@10": 1.0}

    def test_hand_example(self):
        m = metrics_from_ranks([1, 4])
        assert m["MRR"] == 0.625 and m["Hits@3"] == 0.5 and m["Hits@10"] == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            link_prediction_metrics(np.zeros((0, 3), int), np.zeros((2, 2)), np.zeros((1, 2)))

    @given(st.lists(st.integers(1, 60), min_size=1, max_size=50))
    def test_hits_monotone_and_mrr_range(self, ranks):
        m = metrics_from_ranks(ranks)
        assert m["Hits@1"] <= m["Hits@3"] <= m["Hits@10"]
        assert 0 < m["MRR"] <= 1

    def test_fifty_entity_oracle(self):
        seq = generate_synthetic_sequence(SyntheticSpec(n_snapshots=1, n_entities=50, n_relations=4,
                                                        n_triples=300, seed=3))
        rng = np.random.default_rng(0)
        ent, rel = rng.normal(size=(50, 6)), rng.normal(size=(4, 6))
        known = seq.cumulative(0)
        m = link_prediction_metrics(seq[0].test, ent, rel, 50, TripleIndex(known, 50, 4))
        ref = brute_force_metrics(brute_force_ranks(seq[0].test, ent, rel, 50, known))
        for k in m:
            assert abs(m[k] - ref[k]) <= 1e-12


class TestContinual:
    def _seq(self):
        return generate_synthetic_sequence(SyntheticSpec(n_snapshots=3, n_entities=40, n_relations=3,
                                                         n_triples=240, seed=1))

    def test_matrix_shape_and_headline(self):
        seq = self._seq()
        rng = np.random.default_rng(2)
        ent, rel = rng.normal(size=(40, 4)), rng.normal(size=(3, 4))
        rep = MetricsReport()
        for i in range(3):
            continual_evaluate(ent[: seq[i].n_entities], rel, seq, i, "filtered", rep)
        assert sorted(rep.entries) == [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]
        assert rep.averaged(0) == rep.entries[(0, 0)]
        for i in range(3):
            h = rep.averaged(i)
            assert h["Hits@1"] <= h["Hits@10"]

    def test_candidates_are_current_entities(self):
        seq = self._seq()
        rng = np.random.default_rng(2)
        ent, rel = rng.normal(size=(40, 4)), rng.normal(size=(3, 4))
        rep = continual_evaluate(ent, rel, seq, 0, "raw")
        ref = brute_force_metrics(brute_force_ranks(seq[0].test, ent, rel, seq[0].n_entities))
        assert rep.entries[(0, 0)] == pytest.approx(ref, abs=1e-12)

    def test_filter_covers_all_splits_so_far(self):
        seq = self._seq()
        idx = evaluation_filter(seq, 1)
        for t in (0, 1):
            for name in ("train", "valid", "test"):
                assert idx.contains(seq[t].split(name)).all()
        assert not idx.contains(seq[2].train).all()

    def test_unweighted_mean(self):
        rep = MetricsReport()
        rep.add(1, 0, {"MRR": 0.4, "Hits@1": 0.1, "Hits@3": 0.2, "Hits@10": 0.3})
        rep.add(1, 1, {"MRR": 0.6, "Hits@1": 0.3, "Hits@3": 0.4, "Hits@10": 0.5})
        assert rep.averaged(1)["MRR"] == 0.5

    def test_future_test_set_rejected(self):
        with pytest.raises(ValueError):
            MetricsReport().add(0, 1, {"MRR": 1, "Hits@1": 1, "Hits@3": 1, "Hits@10": 1})

    def test_json_roundtrip(self):
        rep = MetricsReport("raw")
        rep.add(0, 0, {"MRR": 1 / 3, "Hits@1": 0.0, "Hits@3": 1.0, "Hits@10": 1.0})
        again = MetricsReport.from_dict(json.loads(rep.to_json()))
        assert again.entries == rep.entries and again.protocol == "raw"
        assert rep.to_csv().splitlines()[0] == "model_snapshot,test_snapshot,metric,value"
        assert len(rep.to_csv().splitlines()) == 1 + 4
