"""The snapshot loop: init new ids, cluster, train, commit, evaluate, persist."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ckge.bayes import BayesStore, GaussianEmbeddingTable, init_new_ids, snapshot_commit
from ckge.checkpoint import load_checkpoint, save_checkpoint, sha256_file
from ckge.clustering import AdjacencyGraph, ClusterState, build_cluster_state, importance_order, importance_scores
from ckge.config import RunConfig
from ckge.errors import CheckpointError, CKGEError
from ckge.evaluation import METRICS, MetricsReport, continual_evaluate
from ckge.kg import SnapshotSequence, TripleIndex, load_snapshot_sequence, write_snapshot_sequence
from ckge.synthetic import generate_synthetic_sequence
from ckge.trainer import TrainState, train_snapshot

logger = logging.getLogger(__name__)

# independent random streams per (seed, snapshot, purpose)
_INIT, _TRAIN, _PROXY, _PIVOT = range(4)

_importance_cache: dict[tuple, np.ndarray] = {}


def _rng(seed: int, t: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, t, purpose])


def cached_importance(graph: AdjacencyGraph, n_total: int, exact_limit: int, pivots: int, seed: int) -> np.ndarray:
    """Importance scores memoized on the graph's edge content."""
    digest = hashlib.sha256(np.asarray(graph.edges(), dtype=np.int64).tobytes()).hexdigest()
    sampled = graph.n_nodes > exact_limit
    key = (digest, graph.n_nodes, n_total, sampled, pivots if sampled else 0, seed if sampled else 0)
    if key not in _importance_cache:
        _importance_cache[key] = importance_scores(graph, n_total, exact_limit, pivots, seed)
    return _importance_cache[key].copy()


def terms_for(cfg: RunConfig) -> frozenset:
    terms = {"kge"}
    if not cfg.disable_bayes:
        terms.add("bayes")
    if not cfg.disable_fcc:
        terms.add("fcc")
    return frozenset(terms)


@dataclass
class SnapshotResult:
    store: BayesStore
    trained_entities: np.ndarray
    trained_relations: np.ndarray
    clusters: ClusterState | None
    history: list = field(default_factory=list)


@dataclass
class RunResult:
    report: MetricsReport
    snapshots: list[SnapshotResult]
    sequence: SnapshotSequence


def prepare_clusters(cfg: RunConfig, seq: SnapshotSequence, t: int, embeddings: np.ndarray,
                     previous: ClusterState | None) -> ClusterState:
    hp = cfg.hp
    n_t = seq[t].n_entities
    graph = AdjacencyGraph.from_triples(seq.cumulative(t, ("train",)), n_t)
    scores = cached_importance(graph, n_t, hp.exact_betweenness_limit, hp.betweenness_pivots,
                               hp.seed * 1000 + t)
    order = importance_order(graph, n_t, scores=scores)
    return build_cluster_state(order, embeddings, hp.n_clusters, scores, _rng(hp.seed, t, _PROXY),
                               hp.proxy_noise, previous)


def run_continual(cfg: RunConfig, seq: SnapshotSequence,
                  on_snapshot: Callable[[int, SnapshotResult, MetricsReport], None] | None = None,
                  log: Callable[[dict], None] | None = None) -> RunResult:
    """Train and evaluate over every snapshot of ``seq``."""
    cfg.validate()
    hp = cfg.hp
    terms = terms_for(cfg)
    store = BayesStore.empty(hp.dim)
    clusters: ClusterState | None = None
    report = MetricsReport(cfg.protocol)
    results = []
    for snap in seq:
        t = snap.index
        init_rng = _rng(hp.seed, t, _INIT)
        store = BayesStore(
            init_new_ids(store.entities, range(len(store.entities), snap.n_entities), hp.lambda_init, init_rng),
            init_new_ids(store.relations, range(len(store.relations), snap.n_relations), hp.lambda_init, init_rng),
        )
        if "fcc" in terms:
            clusters = prepare_clusters(cfg, seq, t, store.entities.means, clusters)
        state = TrainState.from_store(store, None if clusters is None else clusters.proxies)
        known = TripleIndex(seq.cumulative(t, ("train",)), seq.vocab.n_entities, seq.vocab.n_relations)

        def _log(rec, _t=t):
            if log is not None:
                log({"snapshot": _t, **rec})

        state = train_snapshot(state, snap.train, snap.n_entities, known, store, clusters, hp,
                               _rng(hp.seed, t, _TRAIN), terms, cfg.freeze_old_centroids, _log)
        if cfg.disable_bayes:
            store = BayesStore(
                GaussianEmbeddingTable(state.entities.copy(), store.entities.precisions, "entity"),
                GaussianEmbeddingTable(state.relations.copy(), store.relations.precisions, "relation"),
            )
        else:
            store = snapshot_commit(store, state.entities, state.relations,
                                    np.unique(snap.train[:, [0, 2]]), np.unique(snap.train[:, 1]),
                                    hp.lambda_obs, hp.lambda_obs_relation)
        continual_evaluate(store.entities.means, store.relations.means, seq, t, cfg.protocol, report)
        res = SnapshotResult(store, state.entities, state.relations,
                             None if clusters is None else clusters.copy(), list(state.history))
        results.append(res)
        if on_snapshot is not None:
            on_snapshot(t, res, report)
    return RunResult(report, results, seq)


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------


def load_dataset(cfg: RunConfig) -> SnapshotSequence:
    if cfg.data_root is not None:
        return load_snapshot_sequence(cfg.data_root)
    return generate_synthetic_sequence(cfg.synthetic)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_manifest(run_dir: Path, cfg: RunConfig, vocab_digest: str, status: str, extra: dict | None = None) -> None:
    files = {}
    for p in sorted(run_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(run_dir).as_posix()] = sha256_file(p)
    manifest = {
        "status": status,
        "seed": cfg.seed,
        "config": {k: v for k, v in cfg.to_flat().items()},
        "vocab_digest": vocab_digest,
        "files": files,
    }
    if extra:
        manifest.update(extra)
    _write(run_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def verify_manifest(run_dir: Path) -> dict:
    """Check every listed file against its recorded hash."""
    path = run_dir / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read manifest {path}: {exc}") from exc
    for rel, digest in manifest.get("files", {}).items():
        f = run_dir / rel
        if not f.is_file():
            raise CheckpointError(f"manifest lists missing file {f}")
        if sha256_file(f) != digest:
            raise CheckpointError(f"hash mismatch for {f}")
    return manifest


def cluster_dump(seq: SnapshotSequence, clusters: ClusterState, n_entities: int) -> str:
    lines = ["entity\timportance\tcluster\n"]
    for e in range(n_entities):
        lines.append(f"{seq.vocab.entity_names[e]}\t{clusters.importance[e]!r}\t{int(clusters.assignment[e])}\n")
    return "".join(lines)


def train_run(cfg: RunConfig, out_dir: str | Path | None = None) -> Path:
    """Execute one run and persist every artifact under ``out_dir``."""
    cfg.validate()
    run_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write(run_dir / "config.txt", cfg.dumps())
    seq = load_dataset(cfg)
    if cfg.synthetic is not None:
        write_snapshot_sequence(seq, run_dir / "data")
    digest = seq.vocab.digest()
    log_path = run_dir / "train_log.jsonl"
    _write(log_path, "")

    def log(rec: dict) -> None:
        with open(log_path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def persist(t: int, res: SnapshotResult, report: MetricsReport) -> None:
        save_checkpoint(run_dir / "checkpoints" / f"snapshot_{t}.npz", res.store, t, asdict(cfg.hp), digest,
                        res.clusters)
        if res.clusters is not None:
            _write(run_dir / "clusters" / f"snapshot_{t}.tsv", cluster_dump(seq, res.clusters, seq[t].n_entities))
        _write(run_dir / "metrics.json", report.to_json())
        _write(run_dir / "metrics.csv", report.to_csv())
        logger.info("snapshot %d: %s", t, report.averaged(t))

    try:
        run_continual(cfg, seq, persist, log)
    except CKGEError as exc:
        write_manifest(run_dir, cfg, digest, "failed", {"error": f"{type(exc).__name__}: {exc}"})
        raise
    write_manifest(run_dir, cfg, digest, "complete", {"n_snapshots": len(seq)})
    return run_dir


def eval_checkpoint(checkpoint: str | Path, data_root: str | Path, protocol: str = "filtered") -> MetricsReport:
    """Recompute continual metrics for a stored snapshot without training."""
    checkpoint = Path(checkpoint)
    run_dir = checkpoint.parent.parent
    if (run_dir / "manifest.json").is_file():
        verify_manifest(run_dir)
    ck = load_checkpoint(checkpoint)
    seq = load_snapshot_sequence(data_root)
    if ck["header"]["vocab_digest"] != seq.vocab.digest():
        raise CheckpointError(f"{checkpoint} was trained on a different vocabulary than {data_root}")
    t = ck["header"]["snapshot"]
    if t >= len(seq):
        raise CheckpointError(f"checkpoint snapshot {t} is beyond the dataset's {len(seq)} snapshots")
    store = ck["store"]
    return continual_evaluate(store.entities.means, store.relations.means, seq, t, protocol)


def average_reports(reports: list[MetricsReport]) -> MetricsReport:
    out = MetricsReport(reports[0].protocol)
    keys = sorted(set.intersection(*(set(r.entries) for r in reports)))
    for i, j in keys:
        out.add(i, j, {m: math.fsum(r.entries[(i, j)][m] for r in reports) / len(reports) for m in METRICS})
    return out
