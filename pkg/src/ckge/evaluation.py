"""Link-prediction ranking and the continual evaluation protocol."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ckge.kg import SnapshotSequence, Triple, TripleIndex

METRICS = ("MRR", "Hits@1", "Hits@3", "Hits@10")
HITS_AT = (1, 3, 10)
# candidate-block budget in float64 elements
_BLOCK = 1 << 22


def _scores(triples: np.ndarray, side: str, ent: np.ndarray, rel: np.ndarray, n_cand: int) -> np.ndarray:
    """Score matrix ``(len(triples), n_cand)`` with every candidate substituted on ``side``."""
    E = ent[:n_cand]
    if side == "tail":
        q = ent[triples[:, 0]] + rel[triples[:, 1]]
        return np.linalg.norm(q[:, None, :] - E[None, :, :], axis=2)
    r = rel[triples[:, 1]]
    t = ent[triples[:, 2]]
    return np.linalg.norm((E[None, :, :] + r[:, None, :]) - t[:, None, :], axis=2)


def _ranks(triples: np.ndarray, side: str, ent: np.ndarray, rel: np.ndarray, n_cand: int,
           known: TripleIndex | None) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    col = 2 if side == "tail" else 0
    gold = triples[:, col]
    if len(gold) and gold.max() >= n_cand:
        raise RuntimeError("gold answer outside the candidate set")
    d = ent.shape[1]
    chunk = max(1, _BLOCK // max(1, n_cand * d))
    out = np.empty(len(triples), dtype=np.int64)
    cand = np.arange(n_cand)
    for s in range(0, len(triples), chunk):
        tr = triples[s:s + chunk]
        g = gold[s:s + chunk]
        sc = _scores(tr, side, ent, rel, n_cand)
        rows = np.arange(len(tr))
        gold_score = sc[rows, g]
        competing = sc <= gold_score[:, None]
        competing[rows, g] = False
        if known is not None:
            full = np.repeat(tr, n_cand, axis=0)
            full[:, col] = np.tile(cand, len(tr))
            true_other = known.contains(full).reshape(len(tr), n_cand)
            true_other[rows, g] = False
            competing &= ~true_other
        out[s:s + chunk] = 1 + competing.sum(axis=1)
    return out


def rank_query(triple: Triple, side: str, entities: np.ndarray, relations: np.ndarray,
               n_candidates: int | None = None, known: TripleIndex | None = None,
               protocol: str = "filtered") -> int:
    """Pessimistic rank of the gold entity when ``side`` ("head"/"tail") is replaced.

    Rank is ``1 + #{candidates scoring <= gold}`` (excluding gold); under the
    filtered protocol candidates that form a known fact are dropped first.
    """
    if side not in ("head", "tail"):
        raise ValueError("side must be 'head' or 'tail'")
    n = entities.shape[0] if n_candidates is None else n_candidates
    filt = known if protocol == "filtered" else None
    return int(_ranks(np.asarray([tuple(triple)]), side, entities, relations, n, filt)[0])


def metrics_from_ranks(ranks) -> dict[str, float]:
    ranks = np.asarray(ranks, dtype=np.int64)
    if len(ranks) == 0:
        raise ValueError("no ranks to summarize")
    n = len(ranks)
    out = {"MRR": math.fsum((1.0 / ranks).tolist()) / n}
    for k in HITS_AT:
        out[f"Hits@{k}"] = int(np.sum(ranks <= k)) / n
    return out


def link_prediction_metrics(test: np.ndarray, entities: np.ndarray, relations: np.ndarray,
                            n_candidates: int | None = None, known: TripleIndex | None = None,
                            protocol: str = "filtered", return_ranks: bool = False):
    """MRR and Hits@{1,3,10} over head and tail queries of every test triple."""
    test = np.asarray(test, dtype=np.int64).reshape(-1, 3)
    if len(test) == 0:
        raise ValueError("empty test set")
    if protocol not in ("filtered", "raw"):
        raise ValueError(f"unknown protocol {protocol!r}")
    n = entities.shape[0] if n_candidates is None else n_candidates
    filt = known if protocol == "filtered" else None
    tail = _ranks(test, "tail", entities, relations, n, filt)
    head = _ranks(test, "head", entities, relations, n, filt)
    ranks = np.concatenate([tail, head])
    m = metrics_from_ranks(ranks)
    return (m, ranks) if return_ranks else m


@dataclass
class MetricsReport:
    """Metrics per (model snapshot i, test snapshot j <= i)."""

    protocol: str = "filtered"
    entries: dict[tuple[int, int], dict[str, float]] = field(default_factory=dict)

    def add(self, i: int, j: int, metrics: dict[str, float]) -> None:
        if j > i:
            raise ValueError("test snapshot cannot come after the model snapshot")
        self.entries[(i, j)] = {k: float(metrics[k]) for k in METRICS}

    @property
    def model_snapshots(self) -> list[int]:
        return sorted({i for i, _ in self.entries})

    def averaged(self, i: int) -> dict[str, float]:
        """Unweighted mean over test sets ``j <= i`` (the headline number)."""
        rows = [self.entries[(i, j)] for j in range(i + 1) if (i, j) in self.entries]
        if not rows:
            raise KeyError(f"no entries for model snapshot {i}")
        return {k: math.fsum(r[k] for r in rows) / len(rows) for k in METRICS}

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "entries": [
                {"model_snapshot": i, "test_snapshot": j, **self.entries[(i, j)]}
                for i, j in sorted(self.entries)
            ],
            "averaged": [{"model_snapshot": i, **self.averaged(i)} for i in self.model_snapshots],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        rep = cls(data.get("protocol", "filtered"))
        for row in data["entries"]:
            rep.add(int(row["model_snapshot"]), int(row["test_snapshot"]), row)
        return rep

    def csv_rows(self) -> list[tuple[int, int, str, float]]:
        return [(i, j, k, self.entries[(i, j)][k]) for i, j in sorted(self.entries) for k in METRICS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model_snapshot", "test_snapshot", "metric", "value"])
        for row in self.csv_rows():
            w.writerow([row[0], row[1], row[2], repr(row[3])])
        return buf.getvalue()


def evaluation_filter(seq: SnapshotSequence, i: int) -> TripleIndex:
    """All train/valid/test facts of snapshots ``0..i``."""
    return TripleIndex(seq.cumulative(i), seq.vocab.n_entities, seq.vocab.n_relations)


def continual_evaluate(entities: np.ndarray, relations: np.ndarray, seq: SnapshotSequence, i: int,
                       protocol: str = "filtered", report: MetricsReport | None = None) -> MetricsReport:
    """Evaluate the snapshot-``i`` model on every test set ``j <= i``.

    Candidates are the entities known at snapshot ``i``.
    """
    report = report if report is not None else MetricsReport(protocol)
    known = evaluation_filter(seq, i) if protocol == "filtered" else None
    n_cand = seq[i].n_entities
    for j in range(i + 1):
        test = seq[j].test
        if len(test) == 0:
            continue
        report.add(i, j, link_prediction_metrics(test, entities, relations, n_cand, known, protocol))
    return report
