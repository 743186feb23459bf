"""Importance-ordered clustering and the fairness-weighted contrastive loss.

Entities are ranked by ``IE = degree/(N-1) + betweenness`` on the
undirected, unlabeled fact graph, cut into consecutive fixed-size clusters,
and pulled toward their cluster centroid through a cosine-softmax
contrastive loss. Centroids never receive gradients; they move only by
the momentum rule after periodic nearest-centroid reassignment.

The combined objective is ``sum_k alpha_k * sum_i L(e_i, c_k) + L(v_k, c_k)``
and is *minimized*; the leading minus sign that sometimes accompanies this
formula would turn the sum of non-negative log-losses into an objective
unbounded below, so it is dropped.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

NORM_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# graph and centrality
# ---------------------------------------------------------------------------


@dataclass
class AdjacencyGraph:
    """Undirected simple graph over entity ids ``0..n_nodes-1``."""

    n_nodes: int
    adj: list[list[int]]

    @classmethod
    def from_triples(cls, triples: np.ndarray, n_entities: int) -> "AdjacencyGraph":
        tr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        h, t = tr[:, 0], tr[:, 2]
        keep = h != t  # self-loops add no neighbor
        a = np.concatenate([h[keep], t[keep]])
        b = np.concatenate([t[keep], h[keep]])
        return cls.from_edges(zip(a.tolist(), b.tolist()), n_entities)

    @classmethod
    def from_edges(cls, edges, n_nodes: int) -> "AdjacencyGraph":
        nbrs: list[set[int]] = [set() for _ in range(n_nodes)]
        for u, v in edges:
            if u == v:
                continue
            nbrs[u].add(v)
            nbrs[v].add(u)
        return cls(n_nodes, [sorted(s) for s in nbrs])

    def degree(self, e: int) -> int:
        return len(self.adj[e])

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.n_nodes) for v in self.adj[u] if u < v]


def neighbor_centrality(g: AdjacencyGraph, e: int, n_total: int) -> float:
    """Degree of ``e`` over ``N - 1``."""
    if n_total < 2:
        raise ValueError(f"neighbor centrality needs N >= 2, got {n_total}")
    return g.degree(e) / (n_total - 1)


def _single_source(g: AdjacencyGraph, s: int):
    # BFS phase of Brandes' algorithm: order, path counts, predecessors
    sigma = [0] * g.n_nodes
    dist = [-1] * g.n_nodes
    preds: list[list[int]] = [[] for _ in range(g.n_nodes)]
    sigma[s] = 1
    dist[s] = 0
    order = []
    queue = deque([s])
    while queue:
        v = queue.popleft()
        order.append(v)
        dv = dist[v] + 1
        for w in g.adj[v]:
            if dist[w] < 0:
                dist[w] = dv
                queue.append(w)
            if dist[w] == dv:
                sigma[w] += sigma[v]
                preds[w].append(v)
    return order, sigma, preds


def _accumulate(g: AdjacencyGraph, sources, exact: bool):
    zero = Fraction(0) if exact else 0.0
    score = [zero] * g.n_nodes
    for s in sources:
        order, sigma, preds = _single_source(g, s)
        delta = [zero] * g.n_nodes
        for w in reversed(order):
            coeff = (1 + delta[w]) / sigma[w] if not exact else (1 + delta[w]) / Fraction(sigma[w])
            for v in preds[w]:
                delta[v] += sigma[v] * coeff
            if w != s:
                score[w] += delta[w]
    return score


def betweenness_centrality(g: AdjacencyGraph, mode: str = "exact", pivots: int | None = None,
                           seed: int | None = None, exact_arithmetic: bool = False):
    """Sum over unordered pairs ``{s, t}`` (``e`` not an endpoint) of the
    fraction of shortest ``s``-``t`` paths through ``e``.

    ``mode="sampled"`` runs the single-source pass from ``pivots`` uniformly
    drawn sources and rescales by ``n / pivots`` (then halves, like the
    exact sum, since each unordered pair is reached from both ends); asking for at least as many
    pivots as nodes falls back to the exact computation. With
    ``exact_arithmetic`` the result is a list of ``Fraction``; otherwise a
    float array.
    """
    n = g.n_nodes
    if mode not in ("exact", "sampled"):
        raise ValueError(f"unknown betweenness mode {mode!r}")
    if mode == "sampled" and (pivots is None or pivots < 1):
        raise ValueError("sampled betweenness needs pivots >= 1")
    if mode == "sampled" and pivots < n:
        rng = np.random.default_rng(seed)
        sources = sorted(rng.choice(n, size=pivots, replace=False).tolist())
        raw = _accumulate(g, sources, exact_arithmetic)
        scale = Fraction(n, 2 * pivots) if exact_arithmetic else n / (2.0 * pivots)
    else:
        raw = _accumulate(g, range(n), exact_arithmetic)
        scale = Fraction(1, 2) if exact_arithmetic else 0.5
    if exact_arithmetic:
        return [x * scale for x in raw]
    return np.asarray(raw, dtype=np.float64) * scale


def importance_scores(g: AdjacencyGraph, n_total: int, exact_limit: int = 2000, pivots: int = 256,
                      seed: int | None = None) -> np.ndarray:
    """``IE(e) = f_nc(e) + f_bc(e)`` for every node; pivot-sampled betweenness above ``exact_limit`` nodes."""
    deg = np.array([len(a) for a in g.adj], dtype=np.float64)
    nc = deg / (n_total - 1) if n_total >= 2 else np.zeros_like(deg)
    if g.n_nodes > exact_limit:
        bc = betweenness_centrality(g, "sampled", pivots=pivots, seed=seed)
    else:
        bc = betweenness_centrality(g)
    return nc + bc


def importance_order(g: AdjacencyGraph, n_total: int, scores: np.ndarray | None = None, **kwargs) -> list[int]:
    """Entity ids by descending importance, ties by ascending id."""
    if scores is None:
        scores = importance_scores(g, n_total, **kwargs)
    ids = np.arange(len(scores))
    # lexsort: last key is primary
    return np.lexsort((ids, -np.asarray(scores))).tolist()


# ---------------------------------------------------------------------------
# cluster state
# ---------------------------------------------------------------------------


def assign_clusters(ordered, n_clusters: int) -> tuple[np.ndarray, np.ndarray]:
    """Cut an ordered entity list into consecutive clusters of size ``ceil(n/K)``.

    Returns ``(assignment, sizes)``; ``assignment`` is indexed by entity id
    (``-1`` for ids not in ``ordered``).
    """
    if n_clusters < 1:
        raise ValueError("need at least one cluster")
    ordered = np.asarray(list(ordered), dtype=np.int64)
    n = len(ordered)
    assignment = np.full(int(ordered.max()) + 1 if n else 0, -1, dtype=np.int64)
    sizes = np.zeros(n_clusters, dtype=np.int64)
    if n == 0:
        return assignment, sizes
    m = -(-n // n_clusters)
    clusters = np.arange(n) // m
    assignment[ordered] = clusters
    sizes += np.bincount(clusters, minlength=n_clusters)
    return assignment, sizes


def member_means(assignment: np.ndarray, embeddings: np.ndarray, n_clusters: int):
    """Per-cluster mean embedding (NaN rows for empty clusters) and member counts."""
    mask = assignment >= 0
    labels = assignment[mask]
    emb = embeddings[: len(assignment)][mask]
    counts = np.bincount(labels, minlength=n_clusters).astype(np.int64)
    sums = np.zeros((n_clusters, embeddings.shape[1]))
    np.add.at(sums, labels, emb)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    means[counts == 0] = np.nan
    return means, counts


def init_centroids(assignment: np.ndarray, embeddings: np.ndarray, n_clusters: int,
                   inherited: np.ndarray | None = None, inherited_ids=()) -> tuple[np.ndarray, np.ndarray]:
    """Centroid = member mean for new clusters; inherited rows are copied unchanged.

    Returns ``(centroids, active)``; clusters with no members and no
    inherited centroid are inactive (NaN row).
    """
    means, counts = member_means(assignment, embeddings, n_clusters)
    centroids = means
    keep = sorted(int(k) for k in inherited_ids)
    if keep:
        centroids[keep] = inherited[keep]
    active = ~np.isnan(centroids).any(axis=1)
    return centroids, active


def momentum_update(centroids: np.ndarray, means: np.ndarray, eta: float, frozen=()) -> np.ndarray:
    """``c <- (1 - eta) c + eta * mean`` for clusters with members and not frozen."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {eta}")
    out = centroids.copy()
    ok = ~np.isnan(means).any(axis=1) & ~np.isnan(centroids).any(axis=1)
    frozen = list(frozen)
    if frozen:
        ok[frozen] = False
    out[ok] = (1.0 - eta) * centroids[ok] + eta * means[ok]
    return out


def _unit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=-1)
    safe = np.maximum(norms, NORM_FLOOR)
    unit = x / safe[..., None]
    unit[norms < NORM_FLOOR] = 0.0
    return unit, norms


def cosine_matrix(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    ux, _ = _unit(np.atleast_2d(x))
    uc, _ = _unit(np.atleast_2d(c))
    return ux @ uc.T


def reassign_entities(embeddings: np.ndarray, centroids: np.ndarray, active: np.ndarray | None = None) -> np.ndarray:
    """Nearest active centroid by cosine similarity; ties go to the lowest index."""
    if active is None:
        active = ~np.isnan(centroids).any(axis=1)
    act = np.flatnonzero(active)
    if len(act) == 0:
        raise ValueError("no active centroid to assign to")
    sims = cosine_matrix(embeddings, centroids[act])
    return act[np.argmax(sims, axis=1)]


def contrastive_batch(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray, tau: float):
    """Row-wise ``-log softmax(cos(x_i, c_j)/tau)[labels_i]`` and gradients w.r.t. ``x``.

    ``centroids`` must hold active clusters only; ``labels`` index into it.
    A zero-norm row has cosine 0 to every centroid and zero gradient.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    ux, xnorm = _unit(x)
    uc, _ = _unit(np.atleast_2d(centroids))
    s = ux @ uc.T
    z = s / tau
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=1, keepdims=True)
    rows = np.arange(len(x))
    loss = (np.log(denom[:, 0]) + zmax[:, 0]) - z[rows, labels]
    p = ez / denom
    g = p.copy()
    g[rows, labels] -= 1.0
    g /= tau
    proj = (g * s).sum(axis=1, keepdims=True)
    safe = np.maximum(xnorm, NORM_FLOOR)[:, None]
    grad = (g @ uc - proj * ux) / safe
    grad[xnorm < NORM_FLOOR] = 0.0
    return loss, grad


def contrastive_term(x, k: int, centroids: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    loss, grad = contrastive_batch(np.asarray(x)[None, :], np.array([k]), centroids, tau)
    return float(loss[0]), grad[0]


@dataclass
class ClusterState:
    assignment: np.ndarray
    centroids: np.ndarray
    proxies: np.ndarray
    active: np.ndarray
    importance: np.ndarray
    inherited: frozenset = field(default_factory=frozenset)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        a = self.assignment[self.assignment >= 0]
        return np.bincount(a, minlength=self.n_clusters).astype(np.int64)

    def alphas(self, mode: str) -> np.ndarray:
        if mode == "uniform":
            return np.ones(self.n_clusters)
        if mode == "inverse-size":
            sizes = self.sizes.astype(np.float64)
            out = np.zeros(self.n_clusters)
            out[sizes > 0] = 1.0 / sizes[sizes > 0]
            return out
        raise ValueError(f"unknown alpha mode {mode!r}")

    def copy(self) -> "ClusterState":
        return ClusterState(self.assignment.copy(), self.centroids.copy(), self.proxies.copy(),
                            self.active.copy(), self.importance.copy(), self.inherited)

    def refresh_missing(self, ids: np.ndarray, embeddings: np.ndarray) -> None:
        """Give unassigned ids their nearest active centroid."""
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) and ids.max() >= len(self.assignment):
            grown = np.full(int(ids.max()) + 1, -1, dtype=np.int64)
            grown[: len(self.assignment)] = self.assignment
            self.assignment = grown
        missing = ids[self.assignment[ids] < 0]
        if len(missing):
            self.assignment[missing] = reassign_entities(embeddings[missing], self.centroids, self.active)

    def reassign(self, embeddings: np.ndarray) -> None:
        n = len(self.assignment)
        self.assignment = reassign_entities(embeddings[:n], self.centroids, self.active)

    def momentum_step(self, embeddings: np.ndarray, eta: float, freeze_inherited: bool = False) -> None:
        means, _ = member_means(self.assignment, embeddings, self.n_clusters)
        frozen = sorted(self.inherited) if freeze_inherited else ()
        self.centroids = momentum_update(self.centroids, means, eta, frozen)


def build_cluster_state(order, embeddings: np.ndarray, n_clusters: int, importance: np.ndarray,
                        rng: np.random.Generator, proxy_noise: float = 0.01,
                        previous: ClusterState | None = None) -> ClusterState:
    """Fixed-size clusters over the importance order, inheriting centroids and
    proxies of clusters that were active in ``previous``."""
    assignment, _ = assign_clusters(order, n_clusters)
    n = embeddings.shape[0]
    if len(assignment) < n:
        grown = np.full(n, -1, dtype=np.int64)
        grown[: len(assignment)] = assignment
        assignment = grown
    inherited_ids: list[int] = []
    old_c = old_v = None
    if previous is not None:
        inherited_ids = np.flatnonzero(previous.active).tolist()
        old_c, old_v = previous.centroids, previous.proxies
    centroids, active = init_centroids(assignment, embeddings, n_clusters, old_c, inherited_ids)
    noise = rng.normal(0.0, proxy_noise, size=centroids.shape)
    proxies = np.where(active[:, None], centroids + noise, np.nan)
    if inherited_ids:
        proxies[inherited_ids] = old_v[inherited_ids]
    return ClusterState(assignment, centroids, proxies, active, np.asarray(importance, dtype=np.float64),
                        frozenset(inherited_ids))


def fcc_loss(batch_entities, embeddings: np.ndarray, proxies: np.ndarray, state: ClusterState, tau: float,
             alpha_mode: str = "inverse-size"):
    """Fairness-weighted contrastive loss over the batch entities plus the proxy terms.

    Returns ``(loss, entity_ids, entity_grads, proxy_grads)``; gradients
    never flow to centroids. ``proxies`` is passed separately so callers can
    differentiate w.r.t. a working copy.
    """
    ids = np.unique(np.asarray(list(batch_entities), dtype=np.int64))
    act = np.flatnonzero(state.active)
    proxy_grad = np.zeros_like(proxies)
    if len(act) == 0:
        return 0.0, ids, np.zeros((len(ids), embeddings.shape[1])), proxy_grad
    pos = np.full(state.n_clusters, -1, dtype=np.int64)
    pos[act] = np.arange(len(act))
    C = state.centroids[act]
    alphas = state.alphas(alpha_mode)

    loss = 0.0
    ent_grad = np.zeros((len(ids), embeddings.shape[1]))
    if len(ids):
        if ids.max() >= len(state.assignment) or np.any(state.assignment[ids] < 0):
            state.refresh_missing(ids, embeddings)
        k = state.assignment[ids]
        l_e, g_e = contrastive_batch(embeddings[ids], pos[k], C, tau)
        w = alphas[k]
        loss += math.fsum((w * l_e).tolist())
        ent_grad = w[:, None] * g_e
    l_v, g_v = contrastive_batch(proxies[act], np.arange(len(act)), C, tau)
    loss += math.fsum(l_v.tolist())
    proxy_grad[act] = g_v
    return float(loss), ids, ent_grad, proxy_grad
