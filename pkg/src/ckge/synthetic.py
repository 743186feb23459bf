"""Seeded synthetic snapshot sequences with a planted translational structure.

Entities and relations get hidden vectors; a fact ``(h, r, t)`` picks ``t``
among the few entities nearest to ``z_h + w_r``, so the graph is learnable
by a translational scorer. Growth regimes mirror the equal / higher / lower
benchmark families: triple counts per snapshot are flat, doubling, or
halving.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ckge.errors import SpecError
from ckge.kg import SPLITS, SnapshotSequence, build_sequence

REGIMES = ("equal", "higher", "lower")


@dataclass
class SyntheticSpec:
    regime: str = "equal"
    n_snapshots: int = 3
    n_entities: int = 500
    n_relations: int = 20
    n_triples: int = 6000
    entity_counts: list[int] | None = None
    triple_counts: list[int] | None = None
    seed: int = 0
    latent_dim: int = 8
    nearest: int = 3
    relation_scale: float = 0.5
    # entities scatter around n_types hidden class centers (0 = no classes)
    n_types: int = 10
    type_spread: float = 0.3

    def resolved_entity_counts(self) -> list[int]:
        """Cumulative entity count per snapshot."""
        if self.entity_counts is not None:
            return [int(c) for c in self.entity_counts]
        T = self.n_snapshots
        return [int(round(self.n_entities * (t + 1) / T)) for t in range(T)]

    def resolved_triple_counts(self) -> list[int]:
        """Triples introduced per snapshot (all three splits together)."""
        if self.triple_counts is not None:
            return [int(c) for c in self.triple_counts]
        T = self.n_snapshots
        if self.regime == "equal":
            w = np.ones(T)
        elif self.regime == "higher":
            w = 2.0 ** np.arange(T)
        elif self.regime == "lower":
            w = 2.0 ** np.arange(T)[::-1]
        else:
            raise SpecError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        counts = np.floor(self.n_triples * w / w.sum()).astype(int)
        counts[-1] += self.n_triples - counts.sum()
        return counts.tolist()

    def validate(self) -> tuple[list[int], list[int]]:
        if self.regime not in REGIMES:
            raise SpecError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        ents = self.resolved_entity_counts()
        trips = self.resolved_triple_counts()
        if len(ents) != len(trips):
            raise SpecError("entity_counts and triple_counts disagree on the number of snapshots")
        if not ents:
            raise SpecError("need at least one snapshot")
        if self.n_relations < 1:
            raise SpecError("need at least one relation")
        prev, total = 0, 0
        for t, (e, n) in enumerate(zip(ents, trips)):
            if e < prev or e < 1:
                raise SpecError(f"snapshot {t}: entity count {e} must be >= 1 and non-decreasing")
            if n < 0:
                raise SpecError(f"snapshot {t}: negative triple count")
            total += n
            if total > e * e * self.n_relations:
                raise SpecError(
                    f"snapshot {t}: {total} cumulative triples exceed |E|^2*|R| = {e * e * self.n_relations}"
                )
            n_train = n - 2 * (n // 10)
            if e > prev and n_train < (e - prev + 1) // 2:
                raise SpecError(f"snapshot {t}: {n_train} training triples cannot cover {e - prev} new entities")
            if e > prev and e == 1 and n_train == 0:
                raise SpecError(f"snapshot {t}: the single entity needs a training triple")
            prev = e
        return ents, trips


@dataclass
class _Planted:
    z: np.ndarray
    w: np.ndarray
    nearest: int
    used: set = field(default_factory=set)

    def tail_for(self, h: int, r: int, n_ent: int, rng: np.random.Generator) -> int:
        target = self.z[h] + self.w[r]
        dist = np.linalg.norm(self.z[:n_ent] - target, axis=1)
        k = min(self.nearest, n_ent)
        near = np.argpartition(dist, k - 1)[:k]
        near = near[np.argsort(dist[near], kind="stable")]
        return int(near[rng.integers(k)])


def _draw_unique(planted: _Planted, n_ent: int, n_rel: int, rng: np.random.Generator,
                 head: int | None = None, tail: int | None = None) -> tuple[int, int, int] | None:
    for _ in range(50):
        r = int(rng.integers(n_rel))
        h = int(rng.integers(n_ent)) if head is None else head
        t = planted.tail_for(h, r, n_ent, rng) if tail is None else tail
        if (h, r, t) not in planted.used:
            return h, r, t
    for _ in range(200):
        h = int(rng.integers(n_ent)) if head is None else head
        t = int(rng.integers(n_ent)) if tail is None else tail
        r = int(rng.integers(n_rel))
        if (h, r, t) not in planted.used:
            return h, r, t
    # dense corner: enumerate what is left
    heads = range(n_ent) if head is None else [head]
    tails = range(n_ent) if tail is None else [tail]
    free = [(h, r, t) for h in heads for r in range(n_rel) for t in tails if (h, r, t) not in planted.used]
    if not free:
        return None
    return free[int(rng.integers(len(free)))]


def generate_synthetic_sequence(spec: SyntheticSpec) -> SnapshotSequence:
    """Build a snapshot sequence satisfying every loader invariant.

    Each new entity gets at least one training triple in the snapshot that
    introduces it, so valid/test facts never mention an untrained entity.
    """
    ents, trips = spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_total = ents[-1]
    z = rng.standard_normal((n_total, spec.latent_dim))
    if spec.n_types > 0:
        centers = rng.standard_normal((spec.n_types, spec.latent_dim))
        z = centers[rng.integers(spec.n_types, size=n_total)] + spec.type_spread * z
    planted = _Planted(
        z=z,
        w=spec.relation_scale * rng.standard_normal((spec.n_relations, spec.latent_dim)),
        nearest=spec.nearest,
    )

    raw = []
    prev = 0
    for t, (n_ent, n_trip) in enumerate(zip(ents, trips)):
        new = list(range(prev, n_ent))
        rng.shuffle(new)
        n_train = n_trip - 2 * (n_trip // 10)
        cover: list[tuple[int, int, int]] = []
        # when training slots are scarce, one triple introduces two new entities
        step = 2 if len(new) > n_train else 1
        for i in range(0, len(new), step):
            pair = new[i + 1] if step == 2 and i + 1 < len(new) else None
            tr = _draw_unique(planted, n_ent, spec.n_relations, rng, head=new[i], tail=pair)
            if tr is None:
                raise SpecError(f"snapshot {t}: ran out of distinct triples while covering new entities")
            planted.used.add(tr)
            cover.append(tr)
        rest = []
        for _ in range(n_trip - len(cover)):
            tr = _draw_unique(planted, n_ent, spec.n_relations, rng)
            if tr is None:
                raise SpecError(f"snapshot {t}: ran out of distinct triples")
            planted.used.add(tr)
            rest.append(tr)
        n_valid = n_test = n_trip // 10
        order = rng.permutation(len(rest))
        rest = [rest[j] for j in order]
        valid, test = rest[:n_valid], rest[n_valid:n_valid + n_test]
        train = cover + rest[n_valid + n_test:]
        raw.append({"train": train, "valid": valid, "test": test})
        prev = n_ent

    named = [
        {s: [(f"e{h}", f"r{r}", f"e{tl}") for h, r, tl in snap[s]] for s in SPLITS} for snap in raw
    ]
    seq = build_sequence(named)
    # rename so that each name carries its assigned id
    ent_ren = {n: f"e{i}" for i, n in enumerate(seq.vocab.entity_names)}
    rel_ren = {n: f"r{i}" for i, n in enumerate(seq.vocab.relation_names)}
    renamed = [
        {s: [(ent_ren[h], rel_ren[r], ent_ren[tl]) for h, r, tl in snap[s]] for s in SPLITS} for snap in named
    ]
    return build_sequence(renamed)
