import numpy as np
import pytest
from hypothesis import given, strategies as st

from ckge.errors import SpecError
from ckge.kg import check_sequence, load_snapshot_sequence, write_snapshot_sequence
from ckge.synthetic import SyntheticSpec, generate_synthetic_sequence


class TestGenerator:
    def test_tiny_roundtrip(self, tmp_path):
        spec = SyntheticSpec(n_snapshots=1, n_entities=5, n_relations=2, n_triples=10, seed=0, n_types=0)
        seq = generate_synthetic_sequence(spec)
        write_snapshot_sequence(seq, tmp_path)
        again = load_snapshot_sequence(tmp_path)
        assert again.counts() == seq.counts()
        assert seq.counts() == [{"N_E": 5, "N_R": 2, "N_T": 10}]

    def test_higher_regime_doubles(self):
        spec = SyntheticSpec(regime="higher", n_snapshots=3, n_entities=30, n_relations=3,
                             triple_counts=[10, 20, 40], seed=1)
        seq = generate_synthetic_sequence(spec)
        assert [s.n_triples for s in seq] == [10, 20, 40]

    def test_regime_weights(self):
        assert SyntheticSpec(regime="higher", n_triples=70).resolved_triple_counts() == [10, 20, 40]
        assert SyntheticSpec(regime="lower", n_triples=70).resolved_triple_counts() == [40, 20, 10]
        assert SyntheticSpec(regime="equal", n_triples=60).resolved_triple_counts() == [20, 20, 20]

    def test_same_seed_same_bytes(self, tmp_path):
        spec = SyntheticSpec(n_entities=60, n_relations=4, n_triples=300, seed=5)
        for name in ("a", "b"):
            write_snapshot_sequence(generate_synthetic_sequence(spec), tmp_path / name)
        for t in range(3):
            for split in ("train", "valid", "test"):
                rel = f"snapshot_{t}/{split}.txt"
                assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_split_proportions(self):
        seq = generate_synthetic_sequence(SyntheticSpec(n_entities=100, n_relations=5, n_triples=600))
        for snap in seq:
            assert len(snap.valid) == len(snap.test) == snap.n_triples // 10
            assert len(snap.train) == snap.n_triples - 2 * (snap.n_triples // 10)

    def test_infeasible_spec(self):
        with pytest.raises(SpecError, match="triples"):
            generate_synthetic_sequence(SyntheticSpec(n_snapshots=1, n_entities=2, n_relations=1, n_triples=5))

    def test_unknown_regime(self):
        with pytest.raises(SpecError):
            generate_synthetic_sequence(SyntheticSpec(regime="sideways"))

    def test_planted_structure_is_translational(self):
        """Most facts point to one of a few tails per (h, r), so the graph is not uniform noise."""
        seq = generate_synthetic_sequence(SyntheticSpec(n_snapshots=1, n_entities=200, n_relations=5,
                                                        n_triples=2000, seed=2))
        tr = seq.cumulative(0)
        per_query = {}
        for h, r, t in tr.tolist():
            per_query.setdefault((h, r), set()).add(t)
        assert max(len(v) for v in per_query.values()) <= 3


@given(
    n_snapshots=st.integers(1, 4),
    n_entities=st.integers(8, 60),
    n_relations=st.integers(1, 5),
    per_snapshot=st.integers(5, 40),
    regime=st.sampled_from(["equal", "higher", "lower"]),
    seed=st.integers(0, 2**16),
)
def test_generated_sequences_are_valid(n_snapshots, n_entities, n_relations, per_snapshot, regime, seed):
    spec = SyntheticSpec(regime=regime, n_snapshots=n_snapshots, n_entities=n_entities, n_relations=n_relations,
                         n_triples=per_snapshot * n_snapshots, seed=seed)
    try:
        seq = generate_synthetic_sequence(spec)
    except SpecError:
        return
    check_sequence(seq)
    for t, snap in enumerate(seq):
        assert snap.n_entities == spec.resolved_entity_counts()[t]
        trained = set(seq.cumulative(t, ("train",))[:, [0, 2]].ravel().tolist())
        # every entity introduced so far is covered by some training fact
        assert trained == set(range(snap.n_entities))
    all_triples = np.concatenate([seq.cumulative(len(seq) - 1)])
    assert len({tuple(x) for x in all_triples.tolist()}) == len(all_triples)
