"""Triples, snapshots, vocabulary, ingestion and negative sampling.

Snapshot directories hold the *delta* facts introduced at that step: the
training data of snapshot ``t`` is ``snapshot_t/train.txt`` only, while
evaluation filtering uses the cumulative view over ``0..t``.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ckge.errors import ConsistencyError, IngestionError, InvariantError

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
NEGATIVE_RETRIES = 100

_SNAPSHOT_DIR = re.compile(r"^(?:snapshot_)?(\d+)$")


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


def as_array(triples: Iterable[Sequence[int]]) -> np.ndarray:
    """Pack triples into an ``(n, 3)`` int64 array (empty input gives shape ``(0, 3)``)."""
    arr = np.asarray(list(triples), dtype=np.int64)
    return arr.reshape(-1, 3)


@dataclass
class Vocabulary:
    """Name/id bimaps with first-seen snapshot bookkeeping.

    Ids are dense and grow with first appearance, so the entity set of
    snapshot ``t`` is exactly ``range(entity_counts[t])``.
    """

    entity_names: list[str]
    relation_names: list[str]
    entity_first_seen: np.ndarray
    relation_first_seen: np.ndarray
    entity_counts: list[int]
    relation_counts: list[int]
    _ent_index: dict[str, int] = field(init=False, repr=False)
    _rel_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._ent_index = {n: i for i, n in enumerate(self.entity_names)}
        self._rel_index = {n: i for i, n in enumerate(self.relation_names)}
        if len(self._ent_index) != len(self.entity_names):
            raise InvariantError("duplicate entity name in vocabulary")
        if len(self._rel_index) != len(self.relation_names):
            raise InvariantError("duplicate relation name in vocabulary")

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def entity_id(self, name: str) -> int:
        return self._ent_index[name]

    def relation_id(self, name: str) -> int:
        return self._rel_index[name]

    def entity_name(self, idx: int) -> str:
        return self.entity_names[idx]

    def relation_name(self, idx: int) -> str:
        return self.relation_names[idx]

    def digest(self) -> str:
        """Content hash of both bimaps and the per-snapshot counts."""
        h = hashlib.sha256()
        for name in self.entity_names:
            h.update(name.encode("utf-8") + b"\x00")
        h.update(b"\x01")
        for name in self.relation_names:
            h.update(name.encode("utf-8") + b"\x00")
        h.update(repr((self.entity_counts, self.relation_counts)).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class Snapshot:
    index: int
    n_entities: int
    n_relations: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    @property
    def entities(self) -> frozenset[int]:
        return frozenset(range(self.n_entities))

    @property
    def relations(self) -> frozenset[int]:
        return frozenset(range(self.n_relations))

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    def triples(self, name: str = "train") -> list[Triple]:
        return [Triple(*map(int, row)) for row in self.split(name)]

    @property
    def n_triples(self) -> int:
        return len(self.train) + len(self.valid) + len(self.test)

    def counts(self) -> dict[str, int]:
        return {"N_E": self.n_entities, "N_R": self.n_relations, "N_T": self.n_triples}


@dataclass
class SnapshotSequence:
    snapshots: list[Snapshot]
    vocab: Vocabulary

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, t: int) -> Snapshot:
        return self.snapshots[t]

    def __iter__(self):
        return iter(self.snapshots)

    def cumulative(self, t: int, splits: Sequence[str] = SPLITS) -> np.ndarray:
        """All triples of the given splits over snapshots ``0..t``."""
        parts = [s.split(name) for s in self.snapshots[: t + 1] for name in splits]
        return np.concatenate(parts, axis=0) if parts else as_array([])

    def counts(self) -> list[dict[str, int]]:
        return [s.counts() for s in self.snapshots]


class TripleIndex:
    """Membership test for triples via integer codes, vectorized over arrays."""

    def __init__(self, triples: np.ndarray, n_entities: int, n_relations: int):
        self.n_entities = max(int(n_entities), 1)
        self.n_relations = max(int(n_relations), 1)
        self._codes = np.unique(self.encode(as_array(triples)))

    def encode(self, triples: np.ndarray) -> np.ndarray:
        t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return (t[:, 0] * self.n_relations + t[:, 1]) * self.n_entities + t[:, 2]

    def contains(self, triples: np.ndarray) -> np.ndarray:
        codes = self.encode(triples)
        if len(self._codes) == 0:
            return np.zeros(len(codes), dtype=bool)
        pos = np.searchsorted(self._codes, codes)
        pos = np.minimum(pos, len(self._codes) - 1)
        return self._codes[pos] == codes

    def __contains__(self, triple) -> bool:
        return bool(self.contains(np.asarray([tuple(triple)]))[0])

    def __len__(self) -> int:
        return len(self._codes)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _read_id_map(path: Path) -> dict[str, int] | None:
    if not path.exists():
        return None
    mapping: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                # some dumps start with a bare count line
                if lineno == 1 and len(parts) == 1 and parts[0].isdigit():
                    continue
                raise IngestionError(f"{path}:{lineno}: expected 'name<TAB>id'")
            try:
                mapping[parts[0]] = int(parts[1])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: non-integer id {parts[1]!r}") from exc
    return mapping


def _read_triples(path: Path) -> list[tuple[str, str, str]]:
    if not path.is_file():
        raise IngestionError(f"missing triple file: {path}")
    rows: list[tuple[str, str, str]] = []
    seen: set[tuple[str, str, str]] = set()
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 3:
                raise IngestionError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            row = (parts[0], parts[1], parts[2])
            if row in seen:
                duplicates += 1
                continue
            seen.add(row)
            rows.append(row)
    if duplicates:
        logger.warning("%s: dropped %d duplicate triple(s)", path, duplicates)
    return rows


def _snapshot_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise IngestionError(f"dataset root is not a directory: {root}")
    found: dict[int, Path] = {}
    for child in root.iterdir():
        m = _SNAPSHOT_DIR.match(child.name)
        if m and child.is_dir():
            idx = int(m.group(1))
            if idx in found:
                raise IngestionError(f"snapshot {idx} appears twice under {root}")
            found[idx] = child
    if not found:
        raise IngestionError(f"no snapshot_<i> directories under {root}")
    missing = sorted(set(range(max(found) + 1)) - set(found))
    if missing:
        raise IngestionError(f"missing snapshot directory {root / f'snapshot_{missing[0]}'}")
    return [found[i] for i in range(len(found))]


def load_snapshot_sequence(root: str | os.PathLike, allow_relation_growth: bool = True) -> SnapshotSequence:
    """Read ``snapshot_{i}/{train,valid,test}.txt`` files into a sequence.

    Ids follow first-seen order (head before tail, train before valid before
    test, earlier snapshots first) unless ``entity2id.txt`` /
    ``relation2id.txt`` exist at the root, in which case those ids are used
    and validated against the density and growth invariants.
    """
    root = Path(root)
    dirs = _snapshot_dirs(root)
    ent_map = _read_id_map(root / "entity2id.txt")
    rel_map = _read_id_map(root / "relation2id.txt")

    raw = [{name: _read_triples(d / f"{name}.txt") for name in SPLITS} for d in dirs]
    return build_sequence(raw, ent_map, rel_map, allow_relation_growth, map_dir=root)


def build_sequence(raw: list[dict[str, list[tuple[str, str, str]]]],
                   ent_map: dict[str, int] | None = None,
                   rel_map: dict[str, int] | None = None,
                   allow_relation_growth: bool = True,
                   map_dir: Path = Path(".")) -> SnapshotSequence:
    """Assign ids to name-level triples (one dict of splits per snapshot)."""
    ent_first: dict[str, int] = {}
    rel_first: dict[str, int] = {}
    ent_order: list[str] = []
    rel_order: list[str] = []
    for t, splits in enumerate(raw):
        for name in SPLITS:
            for h, r, tl in splits[name]:
                for e in (h, tl):
                    if e not in ent_first:
                        ent_first[e] = t
                        ent_order.append(e)
                if r not in rel_first:
                    if t > 0 and not allow_relation_growth:
                        raise InvariantError(
                            f"relation {r!r} first appears in snapshot {t}; relation growth is disabled"
                        )
                    rel_first[r] = t
                    rel_order.append(r)

    entity_names = _resolve_ids(ent_order, ent_first, ent_map, "entity", map_dir / "entity2id.txt")
    relation_names = _resolve_ids(rel_order, rel_first, rel_map, "relation", map_dir / "relation2id.txt")

    ent_fs = np.array([ent_first[n] for n in entity_names], dtype=np.int64)
    rel_fs = np.array([rel_first[n] for n in relation_names], dtype=np.int64)
    n_snap = len(raw)
    ent_counts = [int(np.sum(ent_fs <= t)) for t in range(n_snap)]
    rel_counts = [int(np.sum(rel_fs <= t)) for t in range(n_snap)]
    vocab = Vocabulary(entity_names, relation_names, ent_fs, rel_fs, ent_counts, rel_counts)

    snapshots = []
    for t, splits in enumerate(raw):
        arrays = {}
        for name in SPLITS:
            arrays[name] = as_array(
                (vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(tl)) for h, r, tl in splits[name]
            )
        snapshots.append(Snapshot(t, ent_counts[t], rel_counts[t], **arrays))
    seq = SnapshotSequence(snapshots, vocab)
    check_sequence(seq)
    return seq


def _resolve_ids(order: list[str], first_seen: dict[str, int], mapping: dict[str, int] | None,
                 kind: str, map_path: Path) -> list[str]:
    if mapping is None:
        return list(order)
    ids = {}
    for name in order:
        if name not in mapping:
            raise ConsistencyError(f"{kind} {name!r} is not listed in {map_path}")
        ids[name] = mapping[name]
    by_id = sorted(order, key=lambda n: ids[n])
    if [ids[n] for n in by_id] != list(range(len(order))):
        raise InvariantError(f"{kind} ids in {map_path} are not dense 0..{len(order) - 1} over used names")
    stamps = [first_seen[n] for n in by_id]
    if any(a > b for a, b in zip(stamps, stamps[1:])):
        raise InvariantError(f"{kind} ids in {map_path} do not grow with first-seen snapshot (non-monotone set)")
    return by_id


def check_sequence(seq: SnapshotSequence) -> None:
    """Raise if any snapshot invariant fails."""
    prev_e, prev_r = 0, 0
    for snap in seq:
        if snap.n_entities < prev_e or snap.n_relations < prev_r:
            raise InvariantError(f"snapshot {snap.index}: entity/relation set shrank")
        for name in SPLITS:
            arr = snap.split(name)
            if len(arr) == 0:
                continue
            if arr.min() < 0 or max(arr[:, 0].max(), arr[:, 2].max()) >= snap.n_entities:
                raise ConsistencyError(f"snapshot {snap.index}/{name}: entity id outside snapshot vocabulary")
            if arr[:, 1].max() >= snap.n_relations:
                raise ConsistencyError(f"snapshot {snap.index}/{name}: relation id outside snapshot vocabulary")
        prev_e, prev_r = snap.n_entities, snap.n_relations


def write_snapshot_sequence(seq: SnapshotSequence, root: str | os.PathLike, write_id_maps: bool = False) -> Path:
    """Write the sequence back in the directory layout the loader reads."""
    root = Path(root)
    vocab = seq.vocab
    for snap in seq:
        d = root / f"snapshot_{snap.index}"
        d.mkdir(parents=True, exist_ok=True)
        for name in SPLITS:
            lines = [
                f"{vocab.entity_names[h]}\t{vocab.relation_names[r]}\t{vocab.entity_names[t]}\n"
                for h, r, t in snap.split(name).tolist()
            ]
            with open(d / f"{name}.txt", "w", encoding="utf-8", newline="\n") as fh:
                fh.writelines(lines)
    if write_id_maps:
        with open(root / "entity2id.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{n}\t{i}\n" for i, n in enumerate(vocab.entity_names))
        with open(root / "relation2id.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{n}\t{i}\n" for i, n in enumerate(vocab.relation_names))
    return root


def delta_sets(seq: SnapshotSequence, t: int) -> tuple[set[int], list[Triple]]:
    """Entities and triples present at snapshot ``t`` but not at ``t - 1``."""
    if not 1 <= t < len(seq):
        raise ValueError(f"delta_sets needs 1 <= t <= {len(seq) - 1}, got {t}")
    new_entities = set(range(seq[t - 1].n_entities, seq[t].n_entities))
    before = {Triple(*row) for row in seq.cumulative(t - 1).tolist()}
    seen: set[Triple] = set()
    new_triples = []
    for name in SPLITS:
        for row in seq[t].split(name).tolist():
            tr = Triple(*row)
            if tr not in before and tr not in seen:
                seen.add(tr)
                new_triples.append(tr)
    return new_entities, new_triples


# ---------------------------------------------------------------------------
# negative sampling
# ---------------------------------------------------------------------------


def sample_negative(positive: Triple, vocab: Vocabulary | int, known, rng: np.random.Generator,
                    max_retries: int = NEGATIVE_RETRIES) -> Triple:
    """Corrupt head or tail (fair coin) with a uniformly drawn entity.

    Corruptions found in ``known`` are redrawn up to ``max_retries`` times;
    after that the last draw is returned even if it is a known fact.
    """
    n = vocab.n_entities if isinstance(vocab, Vocabulary) else int(vocab)
    if n < 1:
        raise ValueError("vocabulary has no entities")
    h, r, t = positive
    cand = Triple(h, r, t)
    for _ in range(max_retries):
        e = int(rng.integers(n))
        cand = Triple(e, r, t) if rng.random() < 0.5 else Triple(h, r, e)
        if cand not in known:
            break
    return cand


def corrupt_batch(positives: np.ndarray, n_entities: int, known: TripleIndex, rng: np.random.Generator,
                  max_retries: int = NEGATIVE_RETRIES) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`sample_negative` for an ``(n, 3)`` array.

    Returns the negatives and a boolean mask that is True where the head was
    replaced.
    """
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    neg = pos.copy()
    head_mask = np.zeros(len(pos), dtype=bool)
    pending = np.arange(len(pos))
    for _ in range(max_retries):
        if len(pending) == 0:
            break
        ents = rng.integers(n_entities, size=len(pending))
        heads = rng.random(len(pending)) < 0.5
        cand = pos[pending].copy()
        cand[heads, 0] = ents[heads]
        cand[~heads, 2] = ents[~heads]
        neg[pending] = cand
        head_mask[pending] = heads
        pending = pending[known.contains(cand)]
    return neg, head_mask
