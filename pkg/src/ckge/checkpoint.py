"""Versioned per-snapshot checkpoints (``.npz`` with a JSON header)."""

from __future__ import annotations

import hashlib
import json
import os
import zipfile
from pathlib import Path

import numpy as np

from ckge.bayes import BayesStore, GaussianEmbeddingTable
from ckge.clustering import ClusterState
from ckge.errors import CheckpointError

FORMAT_VERSION = 1


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def save_checkpoint(path: str | os.PathLike, store: BayesStore, snapshot: int, hyperparameters: dict,
                    vocab_digest: str, clusters: ClusterState | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": FORMAT_VERSION,
        "snapshot": int(snapshot),
        "vocab_digest": vocab_digest,
        "hyperparameters": hyperparameters,
        "n_entities": len(store.entities),
        "n_relations": len(store.relations),
        "dim": store.entities.dim,
        "has_clusters": clusters is not None,
    }
    arrays = {
        "header": np.array(json.dumps(header, sort_keys=True)),
        "entity_means": store.entities.means,
        "entity_precisions": store.entities.precisions,
        "relation_means": store.relations.means,
        "relation_precisions": store.relations.precisions,
    }
    if clusters is not None:
        arrays.update(
            cluster_assignment=clusters.assignment,
            cluster_centroids=clusters.centroids,
            cluster_proxies=clusters.proxies,
            cluster_active=clusters.active,
            cluster_importance=clusters.importance,
            cluster_inherited=np.array(sorted(clusters.inherited), dtype=np.int64),
        )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path: str | os.PathLike) -> dict:
    """Return ``{"header", "store", "clusters"}``; any corruption raises :class:`CheckpointError`."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            arrays = {k: data[k] for k in data.files if k != "header"}
    except (zipfile.BadZipFile, ValueError, KeyError, OSError, EOFError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {header.get('format_version')!r}")
    try:
        store = BayesStore(
            GaussianEmbeddingTable(arrays["entity_means"], arrays["entity_precisions"], "entity"),
            GaussianEmbeddingTable(arrays["relation_means"], arrays["relation_precisions"], "relation"),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed embedding tables: {exc}") from exc
    if len(store.entities) != header["n_entities"] or len(store.relations) != header["n_relations"]:
        raise CheckpointError(f"{path}: table sizes disagree with header")
    clusters = None
    if header.get("has_clusters"):
        try:
            clusters = ClusterState(
                arrays["cluster_assignment"], arrays["cluster_centroids"], arrays["cluster_proxies"],
                arrays["cluster_active"].astype(bool), arrays["cluster_importance"],
                frozenset(arrays["cluster_inherited"].tolist()),
            )
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing cluster array {exc}") from exc
    return {"header": header, "store": store, "clusters": clusters}
