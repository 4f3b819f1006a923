"""DeepWalk / node2vec random walks and skip-gram with negative sampling.

Walks run on the undirected view. Every walk draws from its own splitmix64
stream keyed on (seed, start node, walk index), so the corpus does not depend
on generation order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from numba import njit

from .errors import TrainingError
from .graph import TransactionGraph, undirected_view
from .seeding import derive_seed

log = logging.getLogger(__name__)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _next_uniform(state):
    """Advance ``state[0]`` and return a float in [0, 1)."""
    state[0] = state[0] + _GOLDEN
    return np.float64(_mix(state[0]) >> _S11) * _INV53


@njit(cache=True)
def _stream_seed(seed, a, b):
    z = _mix(np.uint64(seed) + _GOLDEN)
    z = _mix(z ^ (np.uint64(a) * _M1))
    return _mix(z ^ (np.uint64(b) * _M2 + _GOLDEN))


@njit(cache=True)
def _has_edge(indptr, indices, u, x):
    lo = indptr[u]
    hi = indptr[u + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        if indices[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo < indptr[u + 1] and indices[lo] == x


@njit(cache=True)
def _n2v_weights(indptr, indices, t, v, p, q, out):
    k = 0
    for e in range(indptr[v], indptr[v + 1]):
        x = indices[e]
        if x == t:
            out[k] = 1.0 / p
        elif _has_edge(indptr, indices, t, x):
            out[k] = 1.0
        else:
            out[k] = 1.0 / q
        k += 1
    return k


@njit(cache=True)
def _walk(indptr, indices, start, length, p, q, second_order, state, out, weights):
    out[0] = start
    n = 1
    while n < length:
        v = out[n - 1]
        deg = indptr[v + 1] - indptr[v]
        if deg == 0:
            break
        u = _next_uniform(state)
        if n == 1 or not second_order:
            pick = int(u * deg)
            if pick >= deg:
                pick = deg - 1
        else:
            _n2v_weights(indptr, indices, out[n - 2], v, p, q, weights)
            total = 0.0
            for i in range(deg):
                total += weights[i]
            target = u * total
            acc = 0.0
            pick = deg - 1
            for i in range(deg):
                acc += weights[i]
                if target < acc:
                    pick = i
                    break
        out[n] = indices[indptr[v] + pick]
        n += 1
    return n


@njit(cache=True)
def _corpus(indptr, indices, num_nodes, walks_per_node, length, p, q, second_order, seed, walks, lengths):
    maxdeg = 1
    for v in range(num_nodes):
        d = indptr[v + 1] - indptr[v]
        if d > maxdeg:
            maxdeg = d
    weights = np.empty(maxdeg)
    state = np.empty(1, dtype=np.uint64)
    row = 0
    for r in range(walks_per_node):
        for v in range(num_nodes):
            state[0] = _stream_seed(seed, v, r)
            lengths[row] = _walk(indptr, indices, v, length, p, q, second_order, state, walks[row], weights)
            row += 1


def _undirected(graph):
    return graph if graph.undirected else undirected_view(graph)


def _single_walk(graph, start, length, p, q, second_order, rng):
    if length < 1:
        raise ValueError("walk length must be >= 1")
    g = _undirected(graph)
    state = np.array([rng.integers(0, 2**63)], dtype=np.uint64)
    out = np.empty(length, dtype=np.int64)
    weights = np.empty(max(1, int(np.diff(g.out_indptr).max(initial=1))))
    n = _walk(g.out_indptr, g.out_indices, int(start), int(length), float(p), float(q), second_order,
              state, out, weights)
    return out[:n]


def sample_walk_deepwalk(graph: TransactionGraph, start, length, rng: np.random.Generator) -> np.ndarray:
    """Uniform random walk of at most ``length`` nodes, truncated at dead ends."""
    return _single_walk(graph, start, length, 1.0, 1.0, False, rng)


def sample_walk_node2vec(graph: TransactionGraph, start, length, p, q, rng: np.random.Generator) -> np.ndarray:
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    return _single_walk(graph, start, length, p, q, True, rng)


def transition_probs(graph: TransactionGraph, prev, cur, p=1.0, q=1.0, method="node2vec") -> np.ndarray:
    """Normalised next-step distribution over ``graph.neighbors(cur)``."""
    g = _undirected(graph)
    deg = g.out_indptr[cur + 1] - g.out_indptr[cur]
    if method == "deepwalk" or prev is None:
        return np.full(deg, 1.0 / deg)
    w = np.empty(deg)
    _n2v_weights(g.out_indptr, g.out_indices, int(prev), int(cur), float(p), float(q), w)
    return w / w.sum()


@dataclass
class WalkConfig:
    walks_per_node: int = 1
    walk_length: int = 10
    window: int = 5
    latent_dim: int = 16
    p: float = 1.0
    q: float = 1.0
    negatives_per_positive: int = 1
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0
    method: str = "node2vec"


@dataclass
class WalkCorpus:
    walks: np.ndarray  # (num_walks, walk_length), -1 padded
    lengths: np.ndarray

    def __len__(self):
        return len(self.lengths)

    def sequences(self):
        for row, n in zip(self.walks, self.lengths):
            yield row[:n]

    def dump(self, path, node_ids=None):
        with open(path, "w") as fh:
            for seq in self.sequences():
                ids = seq if node_ids is None else node_ids[seq]
                fh.write(" ".join(str(int(i)) for i in ids))
                fh.write("\n")


def generate_walks(graph: TransactionGraph, config: WalkConfig) -> WalkCorpus:
    """``walks_per_node`` rounds, each starting one walk from every node."""
    g = _undirected(graph)
    second_order = config.method == "node2vec"
    rows = config.walks_per_node * g.num_nodes
    walks = np.full((rows, config.walk_length), -1, dtype=np.int64)
    lengths = np.zeros(rows, dtype=np.int64)
    seed = derive_seed(config.seed, "walks", config.method)
    _corpus(g.out_indptr, g.out_indices, g.num_nodes, config.walks_per_node, config.walk_length,
            float(config.p), float(config.q), second_order, np.uint64(seed), walks, lengths)
    return WalkCorpus(walks, lengths)


# ---------------------------------------------------------------------------
# skip-gram with negative sampling

@njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _log_sigmoid(x):
    if x >= 0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


@njit(cache=True)
def _sgns_epoch(walks, lengths, order, window, w_in, w_out, neg_cdf, negatives,
                lr0, lr_min, step, total_steps, state):
    dim = w_in.shape[1]
    grad_in = np.empty(dim)
    loss = 0.0
    pairs = 0
    for r in order:
        n = lengths[r]
        for i in range(n):
            center = walks[r, i]
            lo = max(0, i - window)
            hi = min(n, i + window + 1)
            for j in range(lo, hi):
                if j == i:
                    continue
                ctx = walks[r, j]
                lr = lr0 - (lr0 - lr_min) * (step / total_steps)
                if lr < lr_min:
                    lr = lr_min
                step += 1
                grad_in[:] = 0.0
                # positive pair
                dot = 0.0
                for d in range(dim):
                    dot += w_in[center, d] * w_out[ctx, d]
                loss -= _log_sigmoid(dot)
                g = (1.0 - _sigmoid(dot)) * lr
                for d in range(dim):
                    grad_in[d] += g * w_out[ctx, d]
                    w_out[ctx, d] += g * w_in[center, d]
                for _k in range(negatives):
                    u = _next_uniform(state)
                    neg = np.searchsorted(neg_cdf, u, side="right")
                    if neg >= len(neg_cdf):
                        neg = len(neg_cdf) - 1
                    if neg == ctx:
                        continue
                    dot = 0.0
                    for d in range(dim):
                        dot += w_in[center, d] * w_out[neg, d]
                    loss -= _log_sigmoid(-dot)
                    g = -_sigmoid(dot) * lr
                    for d in range(dim):
                        grad_in[d] += g * w_out[neg, d]
                        w_out[neg, d] += g * w_in[center, d]
                for d in range(dim):
                    w_in[center, d] += grad_in[d]
                pairs += 1
    return loss, pairs, step


@njit(cache=True)
def _count_pairs(lengths, window):
    total = 0
    for n in lengths:
        for i in range(n):
            total += min(n, i + window + 1) - max(0, i - window) - 1
    return total


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray
    method: str
    losses: list

    @property
    def latent_dim(self):
        return self.vectors.shape[1]

    def write_csv(self, path, node_ids):
        df = pd.DataFrame(self.vectors, columns=[f"e{i}" for i in range(self.latent_dim)])
        df.insert(0, "node_id", np.asarray(node_ids))
        df.to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def read_csv(cls, path, method="unknown"):
        df = pd.read_csv(path, float_precision="round_trip")
        vectors = np.ascontiguousarray(df.drop(columns="node_id").to_numpy(dtype=np.float64))
        return cls(vectors, method, []), df["node_id"].to_numpy()


def train_skipgram(corpus: WalkCorpus, num_nodes: int, config: WalkConfig) -> EmbeddingMatrix:
    """Skip-gram with negative sampling by plain SGD.

    Negatives come from walk-occurrence counts raised to 3/4. The learning
    rate decays linearly to ``1e-4 * learning_rate`` over all epochs. Returns
    the input (center) vectors; ``losses`` holds the mean loss per pair for
    each epoch.
    """
    if len(corpus) == 0:
        raise ValueError("empty walk corpus")
    dim = config.latent_dim
    rng = np.random.default_rng(derive_seed(config.seed, "skipgram", config.method))
    w_in = (rng.random((num_nodes, dim)) - 0.5) / dim
    w_out = np.zeros((num_nodes, dim))
    valid = corpus.walks[corpus.walks >= 0]
    counts = np.bincount(valid, minlength=num_nodes).astype(np.float64) ** 0.75
    neg_cdf = np.cumsum(counts / counts.sum())
    neg_cdf[-1] = 1.0
    per_epoch = _count_pairs(corpus.lengths, config.window)
    total = max(1, per_epoch * config.epochs)
    state = np.array([derive_seed(config.seed, "negatives", config.method)], dtype=np.uint64)
    step = 0
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(corpus))
        loss, pairs, step = _sgns_epoch(corpus.walks, corpus.lengths, order, config.window, w_in, w_out,
                                        neg_cdf, config.negatives_per_positive, config.learning_rate,
                                        config.learning_rate * 1e-4, step, total, state)
        mean = loss / pairs if pairs else 0.0
        if not np.isfinite(mean) or not np.isfinite(w_in).all():
            raise TrainingError(f"skip-gram loss became non-finite at epoch {epoch + 1} "
                                f"(loss={mean}, lr={config.learning_rate}, dim={dim})")
        losses.append(float(mean))
        log.debug("skipgram epoch %d loss %.5f", epoch + 1, mean)
    return EmbeddingMatrix(w_in, config.method, losses)


def embed(graph: TransactionGraph, config: WalkConfig) -> EmbeddingMatrix:
    """Walk corpus + skip-gram in one call (corpus generated once per run)."""
    corpus = generate_walks(graph, config)
    return train_skipgram(corpus, graph.num_nodes, config)
