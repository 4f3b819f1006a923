"""GCN, GraphSAGE, GATv2 and GIN layers with a linear prediction head.

Message passing runs over a ``MessageGraph``: by default the undirected
simple view, so information flows both ways along each transaction edge.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import TrainingError
from .evaluation import ScoredNodes, auc_pr
from .graph import NodeTable, SplitMasks, TransactionGraph, undirected_view
from .nn import tensor as T
from .nn.layers import Linear, Module, glorot
from .nn.losses import class_weights_from, masked_cross_entropy
from .nn.optim import Adam
from .seeding import make_rng

log = logging.getLogger(__name__)

ARCHITECTURES = ("gcn", "graphsage", "gat", "gin")
AGGREGATORS = ("min", "mean", "max")


@dataclass
class GnnConfig:
    architecture: str = "gcn"
    latent_dim: int = 64
    hidden_dim: int = 128  # GCN / GraphSAGE only
    num_layers: int = 2
    dropout: float = 0.0
    learning_rate: float = 0.01
    epochs: int = 100
    sample_size: int = 5
    aggregator: str = "mean"
    heads: int = 1
    negative_slope: float = 0.2
    seed: int = 0
    directed_mp: bool = False
    class_weighting: bool = False

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")

    def layer_dims(self, in_dim):
        if self.architecture in ("gcn", "graphsage"):
            return [in_dim] + [self.hidden_dim] * (self.num_layers - 1) + [self.latent_dim]
        return [in_dim] + [self.latent_dim] * self.num_layers


# tuned values (dim, hidden, layers, dropout, lr, epochs and the per-architecture extras)
TUNED = {
    "gcn": GnnConfig("gcn", latent_dim=87, hidden_dim=217, num_layers=3, dropout=0.057,
                     learning_rate=0.0864, epochs=174),
    "graphsage": GnnConfig("graphsage", latent_dim=77, hidden_dim=192, num_layers=1, dropout=0.345,
                           learning_rate=0.0690, epochs=494, sample_size=2, aggregator="max"),
    "gat": GnnConfig("gat", latent_dim=104, num_layers=1, dropout=0.471, learning_rate=0.0487,
                     epochs=282, heads=1),
    "gin": GnnConfig("gin", latent_dim=98, num_layers=1, dropout=0.384, learning_rate=0.0452, epochs=42),
}


def tuned_config(architecture, **overrides) -> GnnConfig:
    return replace(TUNED[architecture], **overrides)


class MessageGraph:
    """Edge arrays and normalised operators for message passing.

    ``src[k] -> dst[k]`` means node ``dst[k]`` receives from ``src[k]``.
    Self-loops and duplicate edges are dropped; GCN and GAT add self-loops
    back explicitly.
    """

    def __init__(self, graph: TransactionGraph, directed=False):
        n = graph.num_nodes
        if directed and not graph.undirected:
            keep = graph.src != graph.dst
            pairs = np.unique(graph.src[keep] * n + graph.dst[keep])
            src, dst = pairs // n, pairs % n
        else:
            und = graph if graph.undirected else undirected_view(graph)
            src = np.concatenate([und.src, und.dst])
            dst = np.concatenate([und.dst, und.src])
        order = np.lexsort((src, dst))
        self.num_nodes = n
        self.src = src[order].astype(np.int64)
        self.dst = dst[order].astype(np.int64)
        self.in_indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.dst, minlength=n), out=self.in_indptr[1:])
        self.in_degree = np.diff(self.in_indptr)
        self._gcn = None
        self._sum = None

    @property
    def num_edges(self):
        return len(self.src)

    def sum_operator(self) -> sp.csr_matrix:
        """``A`` with ``A[i, j] = 1`` when ``j`` sends to ``i`` (no self-loops)."""
        if self._sum is None:
            n = self.num_nodes
            self._sum = sp.csr_matrix((np.ones(self.num_edges), (self.dst, self.src)), shape=(n, n))
        return self._sum

    def gcn_operator(self) -> sp.csr_matrix:
        """``D̃^-1/2 (A + I) D̃^-1/2`` with degrees taken from ``A + I``."""
        if self._gcn is None:
            n = self.num_nodes
            a = (self.sum_operator() + sp.identity(n, format="csr")).tocoo()
            deg = np.asarray(a.sum(axis=1)).ravel()
            inv = 1.0 / np.sqrt(deg)
            self._gcn = sp.csr_matrix((inv[a.row] * a.data * inv[a.col], (a.row, a.col)), shape=(n, n))
        return self._gcn

    def with_self_loops(self):
        loops = np.arange(self.num_nodes)
        return np.concatenate([self.src, loops]), np.concatenate([self.dst, loops])

    def sample_neighbors(self, size, rng: np.random.Generator):
        """Up to ``size`` in-neighbours per node, without replacement."""
        if self.num_edges == 0:
            return self.src, self.dst
        keys = rng.random(self.num_edges)
        order = np.lexsort((keys, self.dst))
        rank = np.arange(self.num_edges) - self.in_indptr[self.dst[order]]
        keep = order[rank < size]
        keep.sort()
        return self.src[keep], self.dst[keep]


class GCNLayer(Module):
    def __init__(self, in_dim, out_dim, rng):
        self.weight = T.parameter(glorot(rng, in_dim, out_dim))
        self.bias = T.parameter(np.zeros((1, out_dim)))

    def __call__(self, h, mg: MessageGraph, **_):
        if h.shape[1] != self.weight.shape[0]:
            raise ValueError(f"GCN layer expects width {self.weight.shape[0]}, got {h.shape[1]}")
        return T.add(T.spmm(mg.gcn_operator(), T.matmul(h, self.weight)), self.bias)


class SAGELayer(Module):
    def __init__(self, in_dim, out_dim, rng, aggregator="mean", sample_size=5):
        self.weight = T.parameter(glorot(rng, 2 * in_dim, out_dim))
        self.bias = T.parameter(np.zeros((1, out_dim)))
        self.aggregator = aggregator
        self.sample_size = sample_size

    def aggregate(self, h, src, dst, num_nodes):
        msgs = T.gather(h, src)
        if self.aggregator == "mean":
            return T.segment_mean(msgs, dst, num_nodes)
        if self.aggregator == "max":
            return T.segment_max(msgs, dst, num_nodes)
        return T.segment_min(msgs, dst, num_nodes)

    def __call__(self, h, mg: MessageGraph, sample=None, **_):
        if 2 * h.shape[1] != self.weight.shape[0]:
            raise ValueError(f"SAGE layer expects width {self.weight.shape[0] // 2}, got {h.shape[1]}")
        src, dst = sample if sample is not None else (mg.src, mg.dst)
        agg = self.aggregate(h, src, dst, mg.num_nodes)
        return T.add(T.matmul(T.concat([h, agg], axis=1), self.weight), self.bias)


class GATLayer(Module):
    """GATv2 attention: ``e_ij = a^T LeakyReLU(W_t h_i + W_s h_j)`` over j ∈ N(i) ∪ {i}.

    ``W_t`` and ``W_s`` are the two halves of ``W`` acting on ``[h_i ‖ h_j]``.
    Heads are concatenated, or averaged when ``concat=False``.
    """

    def __init__(self, in_dim, out_dim, rng, heads=1, concat=True, negative_slope=0.2):
        self.w_target = [T.parameter(glorot(rng, in_dim, out_dim)) for _ in range(heads)]
        self.w_source = [T.parameter(glorot(rng, in_dim, out_dim)) for _ in range(heads)]
        self.att = [T.parameter(glorot(rng, out_dim, 1)) for _ in range(heads)]
        self.bias = T.parameter(np.zeros((1, out_dim * heads if concat else out_dim)))
        self.heads = heads
        self.concat = concat
        self.negative_slope = negative_slope

    def _head(self, h, k, src, dst, n):
        xt = T.matmul(h, self.w_target[k])
        xs = T.matmul(h, self.w_source[k])
        z = T.leaky_relu(T.add(T.gather(xt, dst), T.gather(xs, src)), self.negative_slope)
        alpha = T.segment_softmax(T.matmul(z, self.att[k]), dst, n)
        return T.scatter_add(T.mul(alpha, T.gather(xs, src)), dst, n), alpha

    def attention(self, h, mg: MessageGraph):
        """Per-head attention coefficients aligned with ``mg.with_self_loops()``."""
        src, dst = mg.with_self_loops()
        h = T.as_tensor(h)
        return [self._head(h, k, src, dst, mg.num_nodes)[1].data.ravel() for k in range(self.heads)]

    def __call__(self, h, mg: MessageGraph, **_):
        if h.shape[1] != self.w_target[0].shape[0]:
            raise ValueError(f"GAT layer expects width {self.w_target[0].shape[0]}, got {h.shape[1]}")
        src, dst = mg.with_self_loops()
        outs = [self._head(h, k, src, dst, mg.num_nodes)[0] for k in range(self.heads)]
        if self.heads == 1:
            out = outs[0]
        elif self.concat:
            out = T.concat(outs, axis=1)
        else:
            total = outs[0]
            for o in outs[1:]:
                total = T.add(total, o)
            out = T.mul(total, 1.0 / self.heads)
        return T.add(out, self.bias)


class GINLayer(Module):
    def __init__(self, in_dim, out_dim, rng):
        self.eps = T.parameter(np.zeros((1, 1)))
        self.mlp = [Linear(in_dim, out_dim, rng), Linear(out_dim, out_dim, rng)]

    def combine(self, h, mg: MessageGraph):
        """``(1 + eps) h_v + sum of neighbour rows`` before the MLP."""
        return T.add(T.mul(h, T.add(self.eps, 1.0)), T.spmm(mg.sum_operator(), h))

    def __call__(self, h, mg: MessageGraph, **_):
        if h.shape[1] != self.mlp[0].in_dim:
            raise ValueError(f"GIN layer expects width {self.mlp[0].in_dim}, got {h.shape[1]}")
        return self.mlp[1](T.relu(self.mlp[0](self.combine(h, mg))))


class GNN(Module):
    """Stack of message-passing layers (rectifier + dropout after each) and a linear head."""

    def __init__(self, in_dim, config: GnnConfig, rng):
        self.config = config
        dims = config.layer_dims(in_dim)
        self.convs = []
        width = in_dim
        for i, out_dim in enumerate(dims[1:]):
            last = i == len(dims) - 2
            if config.architecture == "gcn":
                layer = GCNLayer(width, out_dim, rng)
            elif config.architecture == "graphsage":
                layer = SAGELayer(width, out_dim, rng, config.aggregator, config.sample_size)
            elif config.architecture == "gat":
                layer = GATLayer(width, out_dim, rng, heads=config.heads, concat=not last,
                                 negative_slope=config.negative_slope)
                out_dim = out_dim * config.heads if not last else out_dim
            else:
                layer = GINLayer(width, out_dim, rng)
            self.convs.append(layer)
            width = out_dim
        self.head = Linear(width, 2, rng)

    def embed(self, x, mg: MessageGraph, training=False, rng=None, sample_rng=None):
        h = T.as_tensor(x)
        if sample_rng is None:
            sample_rng = make_rng(self.config.seed, "sage-eval")
        for layer in self.convs:
            sample = None
            if isinstance(layer, SAGELayer):
                sample = mg.sample_neighbors(layer.sample_size, sample_rng)
            h = T.relu(layer(h, mg, sample=sample))
            h = T.dropout(h, self.config.dropout, rng, training)
        return h

    def __call__(self, x, mg: MessageGraph, training=False, rng=None, sample_rng=None):
        return self.head(self.embed(x, mg, training, rng, sample_rng))


def illicit_probability(logits) -> np.ndarray:
    z = logits.data if isinstance(logits, T.Tensor) else np.asarray(logits)
    return expit(z[:, 1] - z[:, 0])


def predict(model: GNN, x, mg: MessageGraph) -> np.ndarray:
    """Illicit-class probability per node; SAGE uses the fixed evaluation sample."""
    logits = model(x, mg, training=False, sample_rng=make_rng(model.config.seed, "sage-eval"))
    return illicit_probability(logits)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc_pr: float
    seconds: float


def train_gnn(graph: TransactionGraph, node_table: NodeTable, masks: SplitMasks, config: GnnConfig,
              features=None, evaluate_every=1):
    """Full-batch training on labelled train nodes; returns ``(model, log, message_graph)``.

    Inputs default to the 94 local features. The loss only sees labelled
    train nodes; unknown nodes still pass messages.
    """
    x = node_table.local_features if features is None else np.asarray(features, dtype=np.float64)
    labels = node_table.label.astype(np.int64)
    mg = MessageGraph(graph, directed=config.directed_mp)
    model = GNN(x.shape[1], config, make_rng(config.seed, "gnn-init"))
    opt = Adam(model.parameters(), lr=config.learning_rate)
    weights = class_weights_from(labels[masks.train]) if config.class_weighting else None
    train_mask = masks.train & masks.supervised
    val_mask = masks.val & masks.supervised
    history = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        logits = model(x, mg, training=True, rng=make_rng(config.seed, "dropout", epoch),
                       sample_rng=make_rng(config.seed, "sage-train", epoch))
        loss = masked_cross_entropy(logits, labels, train_mask, weights)
        train_loss = float(loss.data)
        if not np.isfinite(train_loss):
            raise TrainingError(f"{config.architecture}: non-finite training loss at epoch {epoch} "
                                f"(lr={config.learning_rate}, config={asdict(config)})")
        opt.zero_grad()
        T.backward(loss)
        opt.step()
        val_loss = val_ap = float("nan")
        if val_mask.any() and (epoch % evaluate_every == 0 or epoch == config.epochs):
            eval_logits = model(x, mg, training=False, sample_rng=make_rng(config.seed, "sage-eval"))
            val_loss = float(masked_cross_entropy(eval_logits, labels, val_mask, weights).data)
            scored = ScoredNodes.from_mask(illicit_probability(eval_logits), labels, val_mask)
            if scored.label.any():
                val_ap = auc_pr(scored)
        history.append(EpochLog(epoch, train_loss, val_loss, val_ap, time.perf_counter() - t0))
        log.debug("%s epoch %d train %.5f val %.5f ap %.4f", config.architecture, epoch, train_loss,
                  val_loss, val_ap)
    return model, history, mg
