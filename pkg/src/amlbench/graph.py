"""Elliptic-format ingestion, CSR transaction graph and temporal split masks."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .errors import DataFormatError

NUM_LOCAL = 94  # the time step is the first local column
NUM_AGGREGATED = 72
FEATURE_COLUMNS = 1 + NUM_LOCAL + NUM_AGGREGATED  # id, then 166 numeric columns
NUM_TIME_STEPS = 49
TRAIN_END = 30
VAL_END = 40

FEATURES_FILE = "elliptic_txs_features.csv"
CLASSES_FILE = "elliptic_txs_classes.csv"
EDGELIST_FILE = "elliptic_txs_edgelist.csv"

CANONICAL_NODES = 203_769
CANONICAL_EDGES = 234_355
CANONICAL_ILLICIT = 4_545
CANONICAL_LICIT = 42_019


class Label(enum.IntEnum):
    UNKNOWN = -1
    LICIT = 0
    ILLICIT = 1


# public distribution: "1" illicit, "2" licit, "unknown"
LABEL_TOKENS = {"1": Label.ILLICIT, "2": Label.LICIT, "unknown": Label.UNKNOWN}


def _csr(num_nodes, rows, cols):
    order = np.argsort(rows, kind="stable")
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=num_nodes), out=indptr[1:])
    return indptr, cols[order].astype(np.int64)


@dataclass(frozen=True, eq=False)
class TransactionGraph:
    """Immutable graph in compressed sparse row form.

    The directed view keeps duplicate edges and self-loops as shipped. The
    undirected view (``undirected=True``) stores every unordered pair once in
    each direction, so ``out_indptr[-1] == 2 * num_edges`` there.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    out_indptr: np.ndarray
    out_indices: np.ndarray
    in_indptr: np.ndarray
    in_indices: np.ndarray
    time_step: np.ndarray
    node_ids: np.ndarray
    undirected: bool = False

    @classmethod
    def from_edges(cls, num_nodes, src, dst, time_step=None, node_ids=None):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if src.shape != dst.shape:
            raise ValueError("src and dst must have equal length")
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= num_nodes):
            raise ValueError("edge endpoint out of range")
        if time_step is None:
            time_step = np.ones(num_nodes, dtype=np.int64)
        if node_ids is None:
            node_ids = np.arange(num_nodes, dtype=np.int64)
        out_indptr, out_indices = _csr(num_nodes, src, dst)
        in_indptr, in_indices = _csr(num_nodes, dst, src)
        return cls(
            num_nodes=int(num_nodes),
            src=src,
            dst=dst,
            out_indptr=out_indptr,
            out_indices=out_indices,
            in_indptr=in_indptr,
            in_indices=in_indices,
            time_step=np.asarray(time_step, dtype=np.int64),
            node_ids=np.asarray(node_ids, dtype=np.int64),
        )

    @property
    def num_edges(self) -> int:
        return len(self.src)

    @property
    def indptr(self):
        return self.out_indptr

    @property
    def indices(self):
        return self.out_indices

    def neighbors(self, node):
        return self.out_indices[self.out_indptr[node]:self.out_indptr[node + 1]]

    def predecessors(self, node):
        return self.in_indices[self.in_indptr[node]:self.in_indptr[node + 1]]

    def degree(self):
        return np.diff(self.out_indptr)

    @cached_property
    def id_to_index(self) -> dict:
        return {int(x): i for i, x in enumerate(self.node_ids)}

    def adjacency(self) -> sp.csr_matrix:
        """0/1 adjacency with ``A[i, j] = 1`` for each stored edge i -> j."""
        data = np.ones(len(self.out_indices))
        a = sp.csr_matrix((data, self.out_indices, self.out_indptr), shape=(self.num_nodes,) * 2)
        a.data[:] = 1.0
        return a

    def check(self):
        """Assert the structural invariants; raises ``AssertionError``."""
        for indptr, indices in ((self.out_indptr, self.out_indices), (self.in_indptr, self.in_indices)):
            assert indptr[0] == 0 and np.all(np.diff(indptr) >= 0)
            assert indptr[-1] == len(indices)
            assert len(indices) == 0 or (indices.min() >= 0 and indices.max() < self.num_nodes)
        if self.undirected:
            assert self.out_indptr[-1] == 2 * self.num_edges
            assert np.all(self.src < self.dst)
        else:
            assert self.out_indptr[-1] == self.num_edges


def induced_subgraph(graph: TransactionGraph, nodes) -> TransactionGraph:
    """Directed subgraph on ``nodes`` (sorted dense indices), renumbered 0..len(nodes)-1."""
    nodes = np.asarray(nodes, dtype=np.int64)
    local = np.full(graph.num_nodes, -1, dtype=np.int64)
    local[nodes] = np.arange(len(nodes))
    keep = (local[graph.src] >= 0) & (local[graph.dst] >= 0)
    return TransactionGraph.from_edges(len(nodes), local[graph.src[keep]], local[graph.dst[keep]],
                                       time_step=graph.time_step[nodes], node_ids=graph.node_ids[nodes])


def undirected_view(graph: TransactionGraph) -> TransactionGraph:
    """Symmetric simple graph: duplicates merged, self-loops dropped, neighbors sorted."""
    keep = graph.src != graph.dst
    lo = np.minimum(graph.src[keep], graph.dst[keep])
    hi = np.maximum(graph.src[keep], graph.dst[keep])
    pairs = np.unique(lo * graph.num_nodes + hi) if len(lo) else np.zeros(0, dtype=np.int64)
    lo, hi = pairs // graph.num_nodes, pairs % graph.num_nodes
    rows = np.concatenate([lo, hi])
    cols = np.concatenate([hi, lo])
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(graph.num_nodes,) * 2)
    a.sort_indices()
    indptr = a.indptr.astype(np.int64)
    indices = a.indices.astype(np.int64)
    return TransactionGraph(
        num_nodes=graph.num_nodes,
        src=lo.astype(np.int64),
        dst=hi.astype(np.int64),
        out_indptr=indptr,
        out_indices=indices,
        in_indptr=indptr,
        in_indices=indices,
        time_step=graph.time_step,
        node_ids=graph.node_ids,
        undirected=True,
    )


@dataclass(frozen=True, eq=False)
class NodeTable:
    local_features: np.ndarray
    aggregated_features: np.ndarray
    label: np.ndarray  # int8 values of ``Label``

    @property
    def num_nodes(self):
        return len(self.label)

    def intrinsic(self, local_only=False) -> np.ndarray:
        if local_only:
            return self.local_features
        return np.hstack([self.local_features, self.aggregated_features])

    def label_counts(self) -> dict:
        return {lab.name.lower(): int(np.sum(self.label == lab)) for lab in Label}


@dataclass(frozen=True, eq=False)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    supervised: np.ndarray
    counts: dict = field(default_factory=dict)

    def labelled(self, split: str) -> np.ndarray:
        return getattr(self, split) & self.supervised


def make_splits(graph: TransactionGraph, node_table: NodeTable | None = None,
                train_end=TRAIN_END, val_end=VAL_END) -> SplitMasks:
    t = graph.time_step
    bad = np.flatnonzero((t < 1) | (t > NUM_TIME_STEPS))
    if len(bad):
        raise DataFormatError(f"node {int(graph.node_ids[bad[0]])} has time step {int(t[bad[0]])} outside 1..{NUM_TIME_STEPS}")
    train = t <= train_end
    val = (t > train_end) & (t <= val_end)
    test = t > val_end
    if node_table is None:
        supervised = np.zeros(graph.num_nodes, dtype=bool)
    else:
        supervised = node_table.label != Label.UNKNOWN
    counts = {}
    for name, mask in (("train", train), ("val", val), ("test", test)):
        counts[f"{name}_nodes"] = int(mask.sum())
        counts[f"{name}_labelled"] = int((mask & supervised).sum())
        if node_table is not None:
            counts[f"{name}_illicit"] = int((mask & (node_table.label == Label.ILLICIT)).sum())
    return SplitMasks(train=train, val=val, test=test, supervised=supervised, counts=counts)


# ---------------------------------------------------------------------------
# ingestion

def _has_header(path) -> bool:
    with open(path, newline="") as fh:
        first = fh.readline().split(",")[0].strip()
    try:
        float(first)
    except ValueError:
        return True
    return False


def _read_table(path, ncols, what, dtype=None):
    """Read a headerless-or-headed CSV, raising row-numbered errors."""
    skip = 1 if _has_header(path) else 0
    try:
        df = pd.read_csv(path, header=None, skiprows=skip, dtype=dtype, index_col=False,
                         float_precision="round_trip", keep_default_na=False, na_values=[""])
    except pd.errors.ParserError as exc:
        raise DataFormatError(f"{what} file {path}: {exc}") from exc
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=range(ncols)), skip
    if df.shape[1] != ncols:
        raise DataFormatError(f"{what} file {path}, row {1 + skip}: expected {ncols} columns, found {df.shape[1]}")
    bad = df.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0]) + 1 + skip
        raise DataFormatError(f"{what} file {path}, row {row}: expected {ncols} columns")
    return df, skip


def _first_duplicate(ids):
    dup = pd.Index(ids).duplicated()
    return int(np.flatnonzero(dup)[0]) if dup.any() else None


def load_elliptic(features_path, classes_path, edgelist_path, validate_canonical=True):
    """Load the Elliptic CSV triplet into ``(TransactionGraph, NodeTable)``.

    Dense indices follow the row order of the features file.
    """
    feats, fskip = _read_table(features_path, FEATURE_COLUMNS, "features")
    values = feats.to_numpy()
    if not np.issubdtype(values.dtype, np.number):
        try:
            values = values.astype(np.float64)
        except ValueError as exc:
            raise DataFormatError(f"features file {features_path}: non-numeric value ({exc})") from exc
    ids = values[:, 0].astype(np.int64)
    dup = _first_duplicate(ids)
    if dup is not None:
        raise DataFormatError(f"features file {features_path}, row {dup + 1 + fskip}: duplicate node id {ids[dup]}")
    time_step = values[:, 1].astype(np.int64)
    local = np.ascontiguousarray(values[:, 1:1 + NUM_LOCAL], dtype=np.float64)
    aggregated = np.ascontiguousarray(values[:, 1 + NUM_LOCAL:], dtype=np.float64)
    if not (np.isfinite(local).all() and np.isfinite(aggregated).all()):
        row = int(np.flatnonzero(~np.isfinite(values).all(axis=1))[0]) + 1 + fskip
        raise DataFormatError(f"features file {features_path}, row {row}: non-finite feature value")
    index = pd.Index(ids)

    classes, cskip = _read_table(classes_path, 2, "classes", dtype=str)
    cls_ids = pd.to_numeric(classes[0].str.strip(), errors="coerce")
    if cls_ids.isna().any():
        row = int(np.flatnonzero(cls_ids.isna().to_numpy())[0]) + 1 + cskip
        raise DataFormatError(f"classes file {classes_path}, row {row}: non-integer node id")
    cls_ids = cls_ids.to_numpy().astype(np.int64)
    dup = _first_duplicate(cls_ids)
    if dup is not None:
        raise DataFormatError(f"classes file {classes_path}, row {dup + 1 + cskip}: duplicate node id {cls_ids[dup]}")
    tokens = classes[1].str.strip().str.lower()
    codes = tokens.map({k: int(v) for k, v in LABEL_TOKENS.items()})
    if codes.isna().any():
        row = int(np.flatnonzero(codes.isna().to_numpy())[0])
        raise DataFormatError(f"classes file {classes_path}, row {row + 1 + cskip}: unknown label token {tokens.iloc[row]!r}")
    pos = index.get_indexer(cls_ids)
    if (pos < 0).any():
        row = int(np.flatnonzero(pos < 0)[0])
        raise DataFormatError(f"classes file {classes_path}, row {row + 1 + cskip}: unknown node id {cls_ids[row]}")
    label = np.full(len(ids), int(Label.UNKNOWN), dtype=np.int8)
    label[pos] = codes.to_numpy().astype(np.int8)

    edges, eskip = _read_table(edgelist_path, 2, "edge list")
    edges = edges.to_numpy()
    if len(edges) and not np.issubdtype(edges.dtype, np.integer):
        raise DataFormatError(f"edge list {edgelist_path}: non-integer node id")
    src = index.get_indexer(edges[:, 0].astype(np.int64))
    dst = index.get_indexer(edges[:, 1].astype(np.int64))
    missing = (src < 0) | (dst < 0)
    if missing.any():
        row = int(np.flatnonzero(missing)[0])
        raise DataFormatError(f"edge list {edgelist_path}, row {row + 1 + eskip}: unknown node id in {tuple(edges[row])}")

    graph = TransactionGraph.from_edges(len(ids), src, dst, time_step=time_step, node_ids=ids)
    table = NodeTable(local_features=local, aggregated_features=aggregated, label=label)
    if validate_canonical and graph.num_nodes == CANONICAL_NODES:
        counts = table.label_counts()
        if counts["illicit"] != CANONICAL_ILLICIT or counts["licit"] != CANONICAL_LICIT:
            raise DataFormatError(
                f"canonical-size dataset has {counts['illicit']} illicit / {counts['licit']} licit; "
                f"expected {CANONICAL_ILLICIT} / {CANONICAL_LICIT} (label mapping mismatch?)")
    return graph, table


def load_dataset_dir(dataset_dir, **kwargs):
    return load_elliptic(os.path.join(dataset_dir, FEATURES_FILE), os.path.join(dataset_dir, CLASSES_FILE),
                         os.path.join(dataset_dir, EDGELIST_FILE), **kwargs)


def write_elliptic(graph: TransactionGraph, table: NodeTable, dataset_dir):
    """Write the graph back out in the public three-file layout.

    The time-step column comes from ``graph.time_step``; ``local_features[:, 0]``
    is overwritten on reload.
    """
    os.makedirs(dataset_dir, exist_ok=True)
    feats = np.column_stack([table.local_features[:, 1:], table.aggregated_features])
    with open(os.path.join(dataset_dir, FEATURES_FILE), "w", newline="") as fh:
        w = csv.writer(fh)
        for nid, ts, values in zip(graph.node_ids, graph.time_step, feats):
            w.writerow([int(nid), int(ts)] + [repr(float(v)) for v in values])
    inv = {int(v): k for k, v in LABEL_TOKENS.items()}
    with open(os.path.join(dataset_dir, CLASSES_FILE), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["txId", "class"])
        for nid, lab in zip(graph.node_ids, table.label):
            w.writerow([int(nid), inv[int(lab)]])
    write_edgelist(graph, os.path.join(dataset_dir, EDGELIST_FILE))


def write_edgelist(graph: TransactionGraph, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["txId1", "txId2"])
        for s, d in zip(graph.node_ids[graph.src], graph.node_ids[graph.dst]):
            w.writerow([int(s), int(d)])


# ---------------------------------------------------------------------------
# manifest

def manifest(graph: TransactionGraph, table: NodeTable, masks: SplitMasks | None = None) -> dict:
    und = undirected_view(graph)
    out = {
        "num_nodes": graph.num_nodes,
        "num_edges": graph.num_edges,
        "num_undirected_edges": und.num_edges,
        "num_self_loops": int(np.sum(graph.src == graph.dst)),
        "num_time_steps": int(len(np.unique(graph.time_step))),
        "num_local_features": table.local_features.shape[1],
        "num_aggregated_features": table.aggregated_features.shape[1],
    }
    for name, count in table.label_counts().items():
        out[f"label_{name}"] = count
    if masks is None:
        masks = make_splits(graph, table)
    out.update(masks.counts)
    out["content_hash"] = content_hash(graph, table)
    return out


def content_hash(graph: TransactionGraph, table: NodeTable) -> str:
    h = hashlib.sha256()
    for arr in (graph.node_ids, graph.time_step, graph.src, graph.dst, table.label,
                table.local_features, table.aggregated_features):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def format_kv(mapping: dict) -> str:
    buf = io.StringIO()
    for key, value in mapping.items():
        buf.write(f"{key} = {value}\n")
    return buf.getvalue()


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
