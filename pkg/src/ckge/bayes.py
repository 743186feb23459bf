"""Gaussian embedding tables and the sequential conjugate update.

Each entity/relation row carries a mean vector and a diagonal precision
vector. After a snapshot is trained, the trained values are treated as a
Gaussian observation with a fixed scalar precision and folded into the
row's posterior, which becomes the prior of the next snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ckge.errors import InvariantError


@dataclass
class GaussianEmbeddingTable:
    means: np.ndarray
    precisions: np.ndarray
    kind: str = "entity"

    def __post_init__(self) -> None:
        self.means = np.asarray(self.means, dtype=np.float64)
        self.precisions = np.asarray(self.precisions, dtype=np.float64)
        if self.means.ndim != 2 or self.means.shape != self.precisions.shape:
            raise ValueError(f"means {self.means.shape} and precisions {self.precisions.shape} must match (n, d)")
        if self.precisions.size and not np.all(self.precisions > 0):
            raise InvariantError(f"{self.kind} table has non-positive precision")

    @classmethod
    def empty(cls, dim: int, kind: str = "entity") -> "GaussianEmbeddingTable":
        return cls(np.zeros((0, dim)), np.ones((0, dim)), kind)

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def copy(self) -> "GaussianEmbeddingTable":
        return GaussianEmbeddingTable(self.means.copy(), self.precisions.copy(), self.kind)


@dataclass
class BayesStore:
    entities: GaussianEmbeddingTable
    relations: GaussianEmbeddingTable

    @classmethod
    def empty(cls, dim: int) -> "BayesStore":
        return cls(GaussianEmbeddingTable.empty(dim, "entity"), GaussianEmbeddingTable.empty(dim, "relation"))

    def copy(self) -> "BayesStore":
        return BayesStore(self.entities.copy(), self.relations.copy())


def init_new_ids(table: GaussianEmbeddingTable, new_ids, lambda_init: float,
                 rng: np.random.Generator) -> GaussianEmbeddingTable:
    """Append rows for ``new_ids`` with uniform means and constant precision.

    Ids are dense, so ``new_ids`` must be exactly ``len(table) .. len(table)+k-1``.
    """
    if lambda_init <= 0:
        raise ValueError("lambda_init must be > 0")
    ids = sorted(int(i) for i in new_ids)
    n = len(table)
    if any(i < n for i in ids):
        raise ValueError(f"id collision: {[i for i in ids if i < n][:5]} already in the {table.kind} table")
    if ids != list(range(n, n + len(ids))):
        raise ValueError(f"new {table.kind} ids must continue the dense range at {n}")
    d = table.dim
    bound = 6.0 / np.sqrt(d)
    means = rng.uniform(-bound, bound, size=(len(ids), d))
    precs = np.full((len(ids), d), float(lambda_init))
    return GaussianEmbeddingTable(
        np.concatenate([table.means, means]), np.concatenate([table.precisions, precs]), table.kind
    )


def bayes_posterior_update(prior_mean, prior_prec, observation, lambda_obs: float):
    """Precision-weighted average of prior mean and observation.

    Returns ``(post_mean, post_prec)`` with ``post_prec = prior_prec + lambda_obs``.
    """
    if lambda_obs < 0:
        raise ValueError(f"lambda_obs must be >= 0, got {lambda_obs}")
    prior_mean = np.asarray(prior_mean, dtype=np.float64)
    prior_prec = np.asarray(prior_prec, dtype=np.float64)
    observation = np.asarray(observation, dtype=np.float64)
    if prior_mean.shape != prior_prec.shape or prior_mean.shape != observation.shape:
        raise ValueError("prior mean, prior precision and observation must share a shape")
    if np.any(prior_prec <= 0):
        raise InvariantError("prior precision must be > 0")
    post_prec = prior_prec + lambda_obs
    post_mean = (prior_prec * prior_mean + lambda_obs * observation) / post_prec
    return post_mean, post_prec


def _commit_table(table: GaussianEmbeddingTable, trained: np.ndarray, observed, lambda_obs: float):
    trained = np.asarray(trained, dtype=np.float64)
    if trained.shape != table.means.shape:
        raise ValueError(f"trained {table.kind} values {trained.shape} do not match table {table.means.shape}")
    idx = np.unique(np.asarray(list(observed), dtype=np.int64))
    out = table.copy()
    if len(idx):
        mean, prec = bayes_posterior_update(table.means[idx], table.precisions[idx], trained[idx], lambda_obs)
        out.means[idx] = mean
        out.precisions[idx] = prec
    return out


def snapshot_commit(store: BayesStore, trained_entities: np.ndarray, trained_relations: np.ndarray,
                    observed_entities, observed_relations, lambda_obs: float,
                    lambda_obs_relation: float | None = None) -> BayesStore:
    """Fold trained values into the posterior for ids observed this snapshot.

    Rows outside ``observed_*`` are copied bit-for-bit.
    """
    rel_obs = lambda_obs if lambda_obs_relation is None else lambda_obs_relation
    return BayesStore(
        _commit_table(store.entities, trained_entities, observed_entities, lambda_obs),
        _commit_table(store.relations, trained_relations, observed_relations, rel_obs),
    )


def bayes_reg_loss(current, prior_mean, prior_prec, beta: float):
    """Precision-weighted squared distance to the prior mean, and its gradient.

    ``loss = beta * sum(prec * (current - mean)**2)``.
    """
    current = np.asarray(current, dtype=np.float64)
    prior_prec = np.asarray(prior_prec, dtype=np.float64)
    if np.any(prior_prec < 0):
        raise InvariantError("negative precision in Bayesian regularizer")
    diff = current - prior_mean
    weighted = prior_prec * diff
    loss = float(beta * np.sum(weighted * diff))
    return loss, 2.0 * beta * weighted
