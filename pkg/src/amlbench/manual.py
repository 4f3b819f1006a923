"""Hand-engineered network features on the transaction graph.

Density and centralities use the undirected simple view; PageRank follows the
directed transaction flow.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import pandas as pd
from numba import njit

from .errors import NonConvergenceError
from .graph import TransactionGraph, induced_subgraph, undirected_view
from .seeding import derive_seed, make_rng

MANUAL_COLUMNS = ("density", "density_min", "density_mean", "density_max",
                  "betweenness", "closeness", "eigenvector", "pagerank")


def egonet_density(graph: TransactionGraph, node: int) -> float:
    """Edges inside the ego set over the maximum possible, by direct count."""
    nbrs = graph.neighbors(node)
    k = len(nbrs)
    if k == 0:
        return 0.0
    nbr_set = set(nbrs.tolist())
    inner = sum(1 for u in nbrs for w in graph.neighbors(u) if w in nbr_set) // 2
    n_ego = k + 1
    return (k + inner) / (n_ego * (n_ego - 1) / 2)


def egonet_densities(graph: TransactionGraph) -> np.ndarray:
    """Vectorised ``egonet_density`` for every node (counts triangles via A²∘A)."""
    a = graph.adjacency()
    deg = np.diff(graph.out_indptr).astype(np.float64)
    tri = np.asarray((a @ a).multiply(a).sum(axis=1)).ravel() / 2.0
    out = np.zeros(graph.num_nodes)
    nz = deg > 0
    out[nz] = 2.0 * (deg[nz] + tri[nz]) / ((deg[nz] + 1.0) * deg[nz])
    return out


def neighbor_density_stats(graph: TransactionGraph, densities: np.ndarray):
    """Per-node (min, mean, max) of the neighbours' densities; zeros when isolated."""
    indptr, indices = graph.out_indptr, graph.out_indices
    deg = np.diff(indptr)
    vals = densities[indices]
    lo = np.zeros(graph.num_nodes)
    hi = np.zeros(graph.num_nodes)
    mean = np.zeros(graph.num_nodes)
    nz = np.flatnonzero(deg > 0)
    if len(nz):
        starts = indptr[nz]
        lo[nz] = np.minimum.reduceat(vals, starts)
        hi[nz] = np.maximum.reduceat(vals, starts)
        mean[nz] = np.add.reduceat(vals, starts) / deg[nz]
    return lo, mean, hi


@njit(cache=True)
def _brandes(indptr, indices, sources, n):
    bc = np.zeros(n)
    sigma = np.zeros(n)
    dist = np.full(n, -1, dtype=np.int64)
    delta = np.zeros(n)
    order = np.empty(n, dtype=np.int64)
    for s in sources:
        sigma[:] = 0.0
        dist[:] = -1
        delta[:] = 0.0
        sigma[s] = 1.0
        dist[s] = 0
        order[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = order[head]
            head += 1
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
        # stack order is the reverse BFS order
        for i in range(tail - 1, 0, -1):
            w = order[i]
            for k in range(indptr[w], indptr[w + 1]):
                v = indices[k]
                if dist[v] == dist[w] - 1:
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            bc[w] += delta[w]
    return bc


def betweenness(graph: TransactionGraph, sample_count=None, seed=0) -> np.ndarray:
    """Normalised betweenness of an undirected graph.

    ``sample_count=None`` (or >= n) runs exact Brandes; otherwise the
    dependencies of ``sample_count`` uniformly drawn pivots are extrapolated
    by ``n / sample_count``. Normalisation is ``(n-1)(n-2)``, which for the
    undirected double count equals dividing pair counts by ``(n-1)(n-2)/2``.
    """
    n = graph.num_nodes
    if n < 3:
        return np.zeros(n)
    if sample_count is None or sample_count >= n:
        sources = np.arange(n, dtype=np.int64)
        scale = 1.0
    else:
        if sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        rng = make_rng(seed, "betweenness-pivots")
        sources = np.sort(rng.choice(n, size=sample_count, replace=False)).astype(np.int64)
        scale = n / sample_count
    raw = _brandes(graph.out_indptr, graph.out_indices, sources, n)
    return raw * scale / ((n - 1) * (n - 2))


@njit(cache=True)
def _closeness(indptr, indices, n):
    out = np.zeros(n)
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        dist[s] = 0
        queue[0] = s
        head = 0
        tail = 1
        total = 0
        while head < tail:
            v = queue[head]
            head += 1
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    total += dist[w]
                    queue[tail] = w
                    tail += 1
        reach = tail - 1
        if total > 0 and n > 1:
            out[s] = (reach / total) * (reach / (n - 1))
        for i in range(tail):
            dist[queue[i]] = -1
    return out


def closeness(graph: TransactionGraph) -> np.ndarray:
    """Component-scaled (Wasserman–Faust) closeness; isolated nodes get 0."""
    return _closeness(graph.out_indptr, graph.out_indices, graph.num_nodes)


def eigenvector_centrality(graph: TransactionGraph, tol=1e-8, max_iter=1000, start=None) -> np.ndarray:
    """Dominant eigenvector of the undirected adjacency by power iteration.

    Iterates on ``A + I`` (same eigenvectors, no oscillation on bipartite
    graphs). Converged when the max-abs change of the unit vector is below
    ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = graph.num_nodes
    a = graph.adjacency()
    x = np.full(n, 1.0) if start is None else np.abs(np.asarray(start, dtype=np.float64))
    x = x / np.linalg.norm(x)
    resid = np.inf
    for _ in range(max_iter):
        y = a @ x + x
        y /= np.linalg.norm(y)
        resid = np.max(np.abs(y - x))
        x = y
        if resid < tol:
            return np.abs(x)
    raise NonConvergenceError("eigenvector centrality", max_iter, resid)


def pagerank(graph: TransactionGraph, alpha=0.85, tol=1e-10, max_iter=1000, start=None) -> np.ndarray:
    """PageRank on the directed edges.

    ``alpha`` is the probability of following an out-edge; with probability
    ``1 - alpha`` the surfer jumps to a uniformly random node. Mass at
    out-degree-0 nodes is spread uniformly. Converged when the L1 change
    drops below ``tol``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    n = graph.num_nodes
    out_deg = np.diff(graph.out_indptr).astype(np.float64)
    # transition P^T as CSR over in-edges: x_new[j] = sum_i x[i] / outdeg(i)
    at = graph.adjacency().T.tocsr()
    dangling = out_deg == 0
    inv = np.zeros(n)
    inv[~dangling] = 1.0 / out_deg[~dangling]
    x = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=np.float64)
    x = x / x.sum()
    resid = np.inf
    for _ in range(max_iter):
        y = alpha * (at @ (x * inv)) + (alpha * x[dangling].sum() + (1.0 - alpha)) / n
        y /= y.sum()
        resid = np.abs(y - x).sum()
        x = y
        if resid < tol:
            return x
    raise NonConvergenceError("pagerank", max_iter, resid)


@dataclass
class ManualFeatureSet:
    density: np.ndarray
    density_min: np.ndarray
    density_mean: np.ndarray
    density_max: np.ndarray
    betweenness: np.ndarray
    closeness: np.ndarray
    eigenvector: np.ndarray
    pagerank: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.column_stack([getattr(self, f.name) for f in fields(self)])

    def to_frame(self, node_ids) -> pd.DataFrame:
        df = pd.DataFrame({f.name: getattr(self, f.name) for f in fields(self)})
        df.insert(0, "node_id", np.asarray(node_ids))
        return df

    def write_csv(self, path, node_ids):
        self.to_frame(node_ids).to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def read_csv(cls, path):
        df = pd.read_csv(path, float_precision="round_trip")
        return cls(**{c: df[c].to_numpy(dtype=np.float64) for c in MANUAL_COLUMNS}), df["node_id"].to_numpy()


def compute_manual_features(graph: TransactionGraph, pagerank_alpha=0.593, betweenness_pivots=2000,
                            seed=0, eig_tol=1e-8, eig_max_iter=1000, pr_tol=1e-10,
                            pr_max_iter=1000, per_period=False) -> ManualFeatureSet:
    """All manual feature columns; ``per_period`` computes them on each time-step subgraph separately."""
    kwargs = dict(pagerank_alpha=pagerank_alpha, betweenness_pivots=betweenness_pivots, eig_tol=eig_tol,
                  eig_max_iter=eig_max_iter, pr_tol=pr_tol, pr_max_iter=pr_max_iter)
    if per_period:
        out = {name: np.zeros(graph.num_nodes) for name in MANUAL_COLUMNS}
        for step in np.unique(graph.time_step):
            nodes = np.flatnonzero(graph.time_step == step)
            sub = compute_manual_features(induced_subgraph(graph, nodes), seed=derive_seed(seed, "period", int(step)),
                                          **kwargs)
            for name in MANUAL_COLUMNS:
                out[name][nodes] = getattr(sub, name)
        return ManualFeatureSet(**out)
    und = graph if graph.undirected else undirected_view(graph)
    dens = egonet_densities(und)
    lo, mean, hi = neighbor_density_stats(und, dens)
    pivots = None if betweenness_pivots is None or betweenness_pivots >= und.num_nodes else betweenness_pivots
    feats = ManualFeatureSet(
        density=dens,
        density_min=lo,
        density_mean=mean,
        density_max=hi,
        betweenness=betweenness(und, pivots, seed=seed),
        closeness=closeness(und),
        eigenvector=eigenvector_centrality(und, tol=eig_tol, max_iter=eig_max_iter),
        pagerank=pagerank(graph, alpha=pagerank_alpha, tol=pr_tol, max_iter=pr_max_iter),
    )
    bad = [name for name in MANUAL_COLUMNS if not np.isfinite(getattr(feats, name)).all()]
    if bad:
        raise FloatingPointError(f"non-finite manual features: {bad}")
    return feats

