"""Reverse-mode autodiff over dense float64 arrays of rank <= 2.

Each op returns a new ``Tensor`` holding its parents and a closure that
pushes the output gradient back to them. ``backward`` walks the graph in
reverse topological order.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _result(data, parents, backward_fn):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents if req else (), backward_fn=backward_fn if req else None)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate ``.grad`` on every tensor reachable from a scalar ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


# ---------------------------------------------------------------------------
# elementwise and linear algebra

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))
    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))
    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))
    return _result(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * out / b.data, b.shape))
    return _result(out, (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)
    return _result(a.data @ b.data, (a, b), bw)


def spmm(adj: sp.spmatrix, x):
    """Constant sparse matrix times tensor; gradient flows to ``x`` only."""
    x = as_tensor(x)
    adj = sp.csr_matrix(adj)
    adj_t = None

    def bw(g):
        nonlocal adj_t
        if adj_t is None:
            adj_t = adj.T.tocsr()
        _accum(x, adj_t @ g)
    return _result(np.asarray(adj @ x.data), (x,), bw)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def bw(g):
        _accum(x, g * mask)
    return _result(np.where(mask, x.data, 0.0), (x,), bw)


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)

    def bw(g):
        _accum(x, g * scale)
    return _result(x.data * scale, (x,), bw)


def sigmoid(x):
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g):
        _accum(x, g * out * (1.0 - out))
    return _result(out, (x,), bw)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - out ** 2))
    return _result(out, (x,), bw)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def bw(g):
        _accum(x, g * out)
    return _result(out, (x,), bw)


def log(x):
    x = as_tensor(x)

    def bw(g):
        _accum(x, g / x.data)
    return _result(np.log(x.data), (x,), bw)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))
    return _result(out, (x,), bw)


def mean(x, axis=None):
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / count)


def log_softmax(x):
    """Row-wise log-softmax of a 2-D tensor."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bw(g):
        _accum(x, g - soft * g.sum(axis=1, keepdims=True))
    return _result(out, (x,), bw)


def softmax(x):
    return exp(log_softmax(x))


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, part)
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def dropout(x, rate, rng: np.random.Generator | None, training=True):
    """Inverted dropout; the identity (gradient 1) outside training."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bw(g):
        _accum(x, g * keep)
    return _result(x.data * keep, (x,), bw)


# ---------------------------------------------------------------------------
# indexed ops for message passing

def gather(x, index):
    """Rows ``x[index]``."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        if x.requires_grad:
            _accum(x, _segment_sum(g, index, x.shape[0]))
    return _result(x.data[index], (x,), bw)


def _segment_sum(values, segment, num_segments):
    if values.ndim == 1:
        return np.bincount(segment, weights=values, minlength=num_segments)
    m = sp.csr_matrix((np.ones(len(segment)), (segment, np.arange(len(segment)))),
                      shape=(num_segments, len(segment)))
    return np.asarray(m @ values)


def scatter_add(x, segment, num_segments):
    """Sum rows of ``x`` into ``num_segments`` buckets given by ``segment``."""
    x = as_tensor(x)
    segment = np.asarray(segment, dtype=np.int64)

    def bw(g):
        _accum(x, g[segment])
    return _result(_segment_sum(x.data, segment, num_segments), (x,), bw)


def segment_mean(x, segment, num_segments):
    counts = np.bincount(segment, minlength=num_segments).astype(np.float64)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)[:, None]
    return mul(scatter_add(x, segment, num_segments), inv)


def _segment_extreme(x, segment, num_segments, largest):
    x = as_tensor(x)
    segment = np.asarray(segment, dtype=np.int64)
    n_rows, dim = len(segment), x.shape[1]
    out = np.zeros((num_segments, dim))
    if n_rows == 0:
        return _result(out, (x,), lambda g: None)
    order = np.argsort(segment, kind="stable")
    seg_sorted = segment[order]
    starts = np.flatnonzero(np.r_[True, seg_sorted[1:] != seg_sorted[:-1]])
    segs = seg_sorted[starts]
    vals = x.data[order]
    reduce = np.maximum if largest else np.minimum
    red = reduce.reduceat(vals, starts, axis=0)
    out[segs] = red
    # gradient goes to the first row attaining the extreme
    owner = np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, n_rows]))
    cand = np.where(vals == red[owner], order[:, None], n_rows)
    winner = np.minimum.reduceat(cand, starts, axis=0)
    cols = np.broadcast_to(np.arange(dim), winner.shape)

    def bw(g):
        grad = np.zeros_like(x.data)
        grad[winner, cols] = g[segs]
        _accum(x, grad)
    return _result(out, (x,), bw)


def segment_max(x, segment, num_segments):
    """Per-segment column max; empty segments give zeros."""
    return _segment_extreme(x, segment, num_segments, largest=True)


def segment_min(x, segment, num_segments):
    return _segment_extreme(x, segment, num_segments, largest=False)


def segment_softmax(scores, segment, num_segments):
    """Softmax of a column of per-edge scores within each segment."""
    scores = as_tensor(scores)
    segment = np.asarray(segment, dtype=np.int64)
    s = scores.data.reshape(len(segment), -1)
    seg_max = np.full((num_segments, s.shape[1]), -np.inf)
    np.maximum.at(seg_max, segment, s)
    e = np.exp(s - seg_max[segment])
    denom = _segment_sum(e, segment, num_segments)
    out = (e / denom[segment]).reshape(scores.shape)

    def bw(g):
        g2 = g.reshape(s.shape)
        o2 = out.reshape(s.shape)
        dot = _segment_sum(g2 * o2, segment, num_segments)
        _accum(scores, (o2 * (g2 - dot[segment])).reshape(scores.shape))
    return _result(out, (scores,), bw)
