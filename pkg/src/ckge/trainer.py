"""Per-snapshot optimization of the working embeddings.

The objective per mini-batch is the translational margin loss plus the
precision-weighted pull toward the prior mean (over ids touched by the
batch) plus the contrastive clustering loss (over the batch's entities and
all proxies). Gradients are analytic and sparse; parameters are updated
with lazy Adam, which only touches rows that received a gradient.
"""

from __future__ import annotations

import collections
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ckge.bayes import BayesStore, bayes_reg_loss
from ckge.clustering import ClusterState, fcc_loss
from ckge.config import Hyperparameters
from ckge.errors import NumericError
from ckge.kg import TripleIndex, corrupt_batch

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
ALL_TERMS = frozenset({"kge", "bayes", "fcc"})


def transe_score(h, r, t):
    """``||h + r - t||_2`` over the last axis; lower is more plausible."""
    return np.linalg.norm(np.asarray(h) + np.asarray(r) - np.asarray(t), axis=-1)


def margin_loss(pos, neg, gamma: float):
    return np.maximum(0.0, gamma + np.asarray(pos) - np.asarray(neg))


def accumulate_rows(ids: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum gradient rows that share an id; returns sorted unique ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        return ids, np.zeros((0,) + rows.shape[1:])
    uniq, inv = np.unique(ids, return_inverse=True)
    out = np.zeros((len(uniq),) + rows.shape[1:])
    np.add.at(out, inv, rows)
    return uniq, out


def _diff_and_unit(ent, rel, triples):
    diff = ent[triples[:, 0]] + rel[triples[:, 1]] - ent[triples[:, 2]]
    norm = np.linalg.norm(diff, axis=1)
    unit = np.zeros_like(diff)
    nz = norm > 0
    # zero-length translation residual: subgradient 0
    unit[nz] = diff[nz] / norm[nz, None]
    return norm, unit


def kge_batch_gradients(positives: np.ndarray, negatives: np.ndarray, ent: np.ndarray, rel: np.ndarray,
                        gamma: float):
    """Hinge margin loss over paired positives/negatives and its sparse gradient.

    Returns ``(loss, (ent_ids, ent_grad), (rel_ids, rel_grad))``.
    """
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(negatives, dtype=np.int64).reshape(-1, 3)
    d = ent.shape[1]
    if len(pos) == 0:
        return 0.0, (np.zeros(0, np.int64), np.zeros((0, d))), (np.zeros(0, np.int64), np.zeros((0, d)))
    pos_score, pos_unit = _diff_and_unit(ent, rel, pos)
    neg_score, neg_unit = _diff_and_unit(ent, rel, neg)
    hinge = gamma + pos_score - neg_score
    active = hinge > 0
    loss = math.fsum(hinge[active].tolist())
    p, n = pos[active], neg[active]
    gp, gn = pos_unit[active], neg_unit[active]
    ent_ids = np.concatenate([p[:, 0], p[:, 2], n[:, 0], n[:, 2]])
    ent_rows = np.concatenate([gp, -gp, -gn, gn])
    rel_ids = np.concatenate([p[:, 1], n[:, 1]])
    rel_rows = np.concatenate([gp, -gn])
    return float(loss), accumulate_rows(ent_ids, ent_rows), accumulate_rows(rel_ids, rel_rows)


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamMoments":
        return cls(np.zeros_like(params), np.zeros_like(params))

    def grow(self, n: int) -> None:
        extra = n - self.m.shape[0]
        if extra > 0:
            pad = np.zeros((extra,) + self.m.shape[1:])
            self.m = np.concatenate([self.m, pad])
            self.v = np.concatenate([self.v, pad.copy()])


def adam_step(params: np.ndarray, ids: np.ndarray, grads: np.ndarray, moments: AdamMoments, lr: float,
              step: int) -> np.ndarray:
    """Bias-corrected Adam on the given rows only (in place; ``step`` starts at 1).

    Rows whose gradient is identically zero are skipped, so their parameters
    and moments stay untouched.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        return params
    nz = np.any(grads != 0, axis=1)
    ids, grads = ids[nz], grads[nz]
    if len(ids) == 0:
        return params
    m = ADAM_BETA1 * moments.m[ids] + (1 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * moments.v[ids] + (1 - ADAM_BETA2) * grads * grads
    moments.m[ids] = m
    moments.v[ids] = v
    m_hat = m / (1 - ADAM_BETA1 ** step)
    v_hat = v / (1 - ADAM_BETA2 ** step)
    params[ids] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params


@dataclass
class TrainState:
    entities: np.ndarray
    relations: np.ndarray
    proxies: np.ndarray | None = None
    ent_moments: AdamMoments | None = None
    rel_moments: AdamMoments | None = None
    proxy_moments: AdamMoments | None = None
    step: int = 0
    history: collections.deque = field(default_factory=lambda: collections.deque(maxlen=1000))

    def __post_init__(self) -> None:
        self.entities = np.array(self.entities, dtype=np.float64)
        self.relations = np.array(self.relations, dtype=np.float64)
        if self.ent_moments is None:
            self.ent_moments = AdamMoments.zeros_like(self.entities)
        if self.rel_moments is None:
            self.rel_moments = AdamMoments.zeros_like(self.relations)
        if self.proxies is not None and self.proxy_moments is None:
            self.proxy_moments = AdamMoments.zeros_like(self.proxies)

    @classmethod
    def from_store(cls, store: BayesStore, proxies: np.ndarray | None = None) -> "TrainState":
        """Working copy initialized at the prior means."""
        return cls(store.entities.means.copy(), store.relations.means.copy(),
                   None if proxies is None else proxies.copy())


def _check(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite gradient in {name}")


def train_snapshot(state: TrainState, train: np.ndarray, n_entities: int, known: TripleIndex,
                   prior: BayesStore, clusters: ClusterState | None, hp: Hyperparameters,
                   rng: np.random.Generator, terms=ALL_TERMS, freeze_old_centroids: bool = False,
                   log: Callable[[dict], None] | None = None) -> TrainState:
    """Run ``hp.epochs`` passes of mini-batch Adam over ``train``.

    ``terms`` selects which of ``{"kge", "bayes", "fcc"}`` contribute. The
    random stream is consumed only by shuffling and negative sampling, so
    toggling terms never changes the batches or negatives seen.
    """
    terms = frozenset(terms)
    unknown = terms - ALL_TERMS
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}")
    use_fcc = "fcc" in terms and clusters is not None
    if use_fcc and state.proxies is None:
        state.proxies = clusters.proxies.copy()
        state.proxy_moments = AdamMoments.zeros_like(state.proxies)
    train = np.asarray(train, dtype=np.int64).reshape(-1, 3)
    ent, rel = state.entities, state.relations
    prior_em, prior_ep = prior.entities.means, prior.entities.precisions
    prior_rm, prior_rp = prior.relations.means, prior.relations.precisions
    if prior_em.shape != ent.shape or prior_rm.shape != rel.shape:
        raise ValueError("working embeddings and prior tables are not aligned")

    for epoch in range(hp.epochs):
        t0 = time.perf_counter()
        totals = {"kge": 0.0, "bayes": 0.0, "fcc": 0.0}
        perm = rng.permutation(len(train))
        shuffled = train[perm]
        negs = [corrupt_batch(shuffled, n_entities, known, rng)[0] for _ in range(hp.negatives)]
        for start in range(0, len(shuffled), hp.batch_size):
            pos = shuffled[start:start + hp.batch_size]
            neg = np.concatenate([n[start:start + hp.batch_size] for n in negs])
            pos_rep = np.tile(pos, (hp.negatives, 1))
            e_ids, e_rows, r_ids, r_rows = [], [], [], []

            if "kge" in terms:
                loss, (ei, eg), (ri, rg) = kge_batch_gradients(pos_rep, neg, ent, rel, hp.margin)
                _check("L_KGE", eg, rg)
                totals["kge"] += loss
                e_ids.append(ei), e_rows.append(eg), r_ids.append(ri), r_rows.append(rg)

            if "bayes" in terms and hp.beta > 0:
                touched_e = np.unique(np.concatenate([pos[:, 0], pos[:, 2], neg[:, 0], neg[:, 2]]))
                touched_r = np.unique(pos[:, 1])
                le, ge = bayes_reg_loss(ent[touched_e], prior_em[touched_e], prior_ep[touched_e], hp.beta)
                lr_, gr = bayes_reg_loss(rel[touched_r], prior_rm[touched_r], prior_rp[touched_r], hp.beta)
                _check("L_Bayes", ge, gr)
                totals["bayes"] += le + lr_
                e_ids.append(touched_e), e_rows.append(ge), r_ids.append(touched_r), r_rows.append(gr)

            proxy_grad = None
            if use_fcc:
                batch_ents = np.concatenate([pos[:, 0], pos[:, 2]])
                loss, fi, fg, proxy_grad = fcc_loss(batch_ents, ent, state.proxies, clusters, hp.tau, hp.alpha_mode)
                _check("L_FCC", fg, proxy_grad)
                totals["fcc"] += loss
                e_ids.append(fi), e_rows.append(fg)

            state.step += 1
            if e_ids:
                ids, rows = accumulate_rows(np.concatenate(e_ids), np.concatenate(e_rows))
                adam_step(ent, ids, rows, state.ent_moments, hp.learning_rate, state.step)
                if hp.normalize_entities:
                    norms = np.linalg.norm(ent[ids], axis=1, keepdims=True)
                    ent[ids] = ent[ids] / np.maximum(norms, 1e-12)
            if r_ids:
                ids, rows = accumulate_rows(np.concatenate(r_ids), np.concatenate(r_rows))
                adam_step(rel, ids, rows, state.rel_moments, hp.learning_rate, state.step)
            if proxy_grad is not None:
                act = np.flatnonzero(clusters.active)
                adam_step(state.proxies, act, proxy_grad[act], state.proxy_moments, hp.learning_rate, state.step)

        if use_fcc and (epoch + 1) % hp.reassign_every == 0:
            clusters.reassign(ent)
            clusters.momentum_step(ent, hp.momentum, freeze_old_centroids)

        record = {
            "epoch": epoch,
            "L_KGE": totals["kge"],
            "L_Bayes": totals["bayes"],
            "L_FCC": totals["fcc"],
            "L_total": totals["kge"] + totals["bayes"] + totals["fcc"],
            "wall_time": time.perf_counter() - t0,
        }
        state.history.append(record)
        if log is not None:
            log(record)
    if use_fcc:
        clusters.proxies = state.proxies.copy()
    return state
