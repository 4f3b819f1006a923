"""Train one method end to end and score it under the matching resampling protocol."""

from __future__ import annotations

import hashlib
import logging
import os
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import __version__
from .config import DEFAULTS, TUNED, RunConfig
from .errors import TrainingError
from .evaluation import (EvalReport, ScoredNodes, auc_pr, bootstrap_report, mask_halving_report)
from .gnn import GnnConfig, illicit_probability, predict, train_gnn
from .graph import NodeTable, SplitMasks, TransactionGraph, load_dataset_dir, make_splits, manifest, undirected_view
from .manual import MANUAL_COLUMNS, ManualFeatureSet, compute_manual_features
from .nn import tensor as T
from .nn.layers import MlpDecoder
from .nn.losses import class_weights_from, masked_cross_entropy
from .nn.optim import Adam
from .seeding import derive_seed, make_rng
from .walks import EmbeddingMatrix, WalkConfig, embed

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Dataset:
    graph: TransactionGraph
    table: NodeTable
    masks: SplitMasks

    @classmethod
    def load(cls, dataset_dir):
        graph, table = load_dataset_dir(dataset_dir)
        return cls(graph, table, make_splits(graph, table))

    @classmethod
    def from_parts(cls, graph, table):
        return cls(graph, table, make_splits(graph, table))

    @cached_property
    def undirected(self):
        return undirected_view(self.graph)

    @cached_property
    def manifest(self):
        return manifest(self.graph, self.table, self.masks)

    @property
    def fingerprint(self):
        return self.manifest["content_hash"]

    def train_prevalence_percent(self):
        lab = self.table.label[self.masks.labelled("train")]
        return 100.0 * float(np.mean(lab == 1)) if len(lab) else 0.0


# ---------------------------------------------------------------------------
# features

def _cache_path(cache_dir, kind, key):
    if not cache_dir:
        return None
    os.makedirs(cache_dir, exist_ok=True)
    digest = hashlib.sha256(repr(key).encode()).hexdigest()[:16]
    return os.path.join(cache_dir, f"{kind}-{digest}.csv")


def manual_features(ds: Dataset, hp: dict, seed, cache_dir=None) -> ManualFeatureSet:
    key = (ds.fingerprint, hp["random_jump_parameter"], hp["betweenness_pivots"], hp["eigenvector_tol"],
           hp["eigenvector_max_iter"], derive_seed(seed, "manual"), hp["per_period_centralities"])
    path = _cache_path(cache_dir, "manual", key)
    if path and os.path.exists(path):
        return ManualFeatureSet.read_csv(path)[0]
    feats = compute_manual_features(ds.graph, pagerank_alpha=hp["random_jump_parameter"],
                                    betweenness_pivots=hp["betweenness_pivots"], seed=derive_seed(seed, "manual"),
                                    eig_tol=hp["eigenvector_tol"], eig_max_iter=hp["eigenvector_max_iter"],
                                    per_period=hp["per_period_centralities"])
    if path:
        feats.write_csv(path, ds.graph.node_ids)
    return feats


def walk_config(method: str, hp: dict, seed) -> WalkConfig:
    base = method.replace("-ni", "")
    return WalkConfig(
        walks_per_node=hp["number_of_walks_per_node"],
        walk_length=hp["walk_length"],
        window=hp["word2vec_context_window_size"],
        latent_dim=hp["latent_dimension"],
        p=hp.get("return_parameter", 1.0) if base == "node2vec" else 1.0,
        q=hp.get("in_out_parameter", 1.0) if base == "node2vec" else 1.0,
        negatives_per_positive=hp["number_of_negative_samples"],
        epochs=hp["number_of_epochs"],
        learning_rate=hp["learning_rate"],
        seed=derive_seed(seed, base, "embedding"),
        method=base,
    )


def embedding(ds: Dataset, method: str, hp: dict, seed, cache_dir=None) -> EmbeddingMatrix:
    cfg = walk_config(method, hp, seed)
    path = _cache_path(cache_dir, "embedding", (ds.fingerprint, sorted(vars(cfg).items())))
    if path and os.path.exists(path):
        return EmbeddingMatrix.read_csv(path, cfg.method)[0]
    emb = embed(ds.undirected, cfg)
    if path:
        emb.write_csv(path, ds.graph.node_ids)
    return emb


def _standardise(x, train_rows):
    mu = x[train_rows].mean(axis=0)
    sd = x[train_rows].std(axis=0)
    sd[sd == 0] = 1.0
    return (x - mu) / sd


FEATURE_BLOCKS = ("intrinsic", "local", "manual", "deepwalk", "node2vec")


def default_blocks(config: RunConfig) -> list:
    """Feature blocks a method feeds its model, in concatenation order."""
    if config.is_gnn:
        return ["local"]
    blocks = [] if config.method.endswith("-ni") else ["intrinsic"]
    if config.base in ("manual", "deepwalk", "node2vec"):
        blocks.append(config.base)
    return blocks


def build_features(ds: Dataset, config: RunConfig, cache_dir=None, blocks=None):
    """Feature matrix in the fixed order [intrinsic ‖ manual ‖ embedding].

    Every column is standardised with train-split statistics; shipped
    columns are near-standard already except the raw time step.
    """
    blocks = default_blocks(config) if blocks is None else list(blocks)
    unknown = set(blocks) - set(FEATURE_BLOCKS)
    if unknown:
        raise ValueError(f"unknown feature blocks {sorted(unknown)}; choose from {', '.join(FEATURE_BLOCKS)}")
    if not blocks:
        raise ValueError(f"no features selected for method {config.method!r}")
    hp = config.resolved()
    parts, columns = [], []
    n_local = ds.table.local_features.shape[1]
    if "intrinsic" in blocks:
        parts.append(_standardise(ds.table.intrinsic(), ds.masks.train))
        columns += [f"local_{i}" for i in range(n_local)]
        columns += [f"aggregated_{i}" for i in range(ds.table.aggregated_features.shape[1])]
    elif "local" in blocks:
        parts.append(_standardise(ds.table.local_features, ds.masks.train))
        columns += [f"local_{i}" for i in range(n_local)]
    if "manual" in blocks:
        parts.append(_standardise(manual_features(ds, hp, config.seed, cache_dir).matrix(), ds.masks.train))
        columns += list(MANUAL_COLUMNS)
    for walk in ("deepwalk", "node2vec"):
        if walk in blocks:
            # a walk block outside its own method uses that walk's tuned settings
            whp = hp if config.base == walk else {**DEFAULTS, **TUNED[walk]}
            emb = embedding(ds, walk, whp, config.seed, cache_dir)
            parts.append(_standardise(emb.vectors, ds.masks.train))
            columns += [f"{walk}_{i}" for i in range(emb.latent_dim)]
    # C order keeps BLAS rounding identical whether blocks came from the cache or were computed fresh
    return np.ascontiguousarray(np.hstack(parts)), columns


def columns_hash(columns) -> str:
    return hashlib.sha256(",".join(columns).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# training

@dataclass
class MethodResult:
    method: str
    report: EvalReport
    test_scores: ScoredNodes
    val_auc_pr: float
    log_rows: list
    state: dict
    columns: list
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)


def train_decoder(x, labels, train_mask, val_mask, num_layers, hidden_dim, lr, epochs, seed,
                  class_weighting=False):
    """Full-batch Adam on labelled train rows; returns ``(decoder, log_rows)``."""
    decoder = MlpDecoder(x.shape[1], num_layers, hidden_dim, make_rng(seed, "decoder-init"))
    opt = Adam(decoder.parameters(), lr=lr)
    train_idx = np.flatnonzero(train_mask & (labels >= 0))
    val_idx = np.flatnonzero(val_mask & (labels >= 0))
    xt = T.Tensor(x[train_idx])
    yt = labels[train_idx]
    weights = class_weights_from(yt) if class_weighting else None
    rows = []
    for epoch in range(1, epochs + 1):
        loss = masked_cross_entropy(decoder(xt, training=True), yt, np.ones(len(yt), dtype=bool), weights)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"decoder loss non-finite at epoch {epoch} (lr={lr})")
        opt.zero_grad()
        T.backward(loss)
        opt.step()
        rows.append({"epoch": epoch, "train_loss": value})
    if len(val_idx):
        logits = decoder(x[val_idx])
        rows[-1]["val_loss"] = float(masked_cross_entropy(logits, labels[val_idx],
                                                          np.ones(len(val_idx), dtype=bool), weights).data)
        scored = ScoredNodes(illicit_probability(logits), labels[val_idx], val_idx)
        rows[-1]["val_auc_pr"] = auc_pr(scored) if scored.label.any() else float("nan")
    return decoder, rows


def resolve_thresholds(config: RunConfig, ds: Dataset):
    out = []
    for t in config.thresholds:
        if t == "p":
            p = config.prevalence_percent if config.prevalence_percent is not None else ds.train_prevalence_percent()
            out.append(("top_p", float(p)))
        else:
            out.append(float(t))
    return out


def run_method(ds: Dataset, config: RunConfig, cache_dir=None, evaluate=True) -> MethodResult:
    t0 = time.perf_counter()
    hp = config.resolved()
    labels = ds.table.label.astype(np.int64)
    method_seed = derive_seed(config.seed, config.method)
    if config.is_gnn:
        gcfg = GnnConfig(
            architecture=config.method,
            latent_dim=hp["latent_dimension"],
            hidden_dim=hp.get("gnn_hidden_dimensions", hp["latent_dimension"]),
            num_layers=hp["gnn_layers"],
            dropout=hp["dropout_rate"],
            learning_rate=hp["learning_rate"],
            epochs=hp["number_of_epochs"],
            sample_size=hp.get("number_of_neighbourhood_samples", 5),
            aggregator=hp.get("aggregator", "mean"),
            heads=hp.get("number_of_heads", 1),
            seed=method_seed,
            directed_mp=hp["directed_mp"],
            class_weighting=hp["class_weighting"],
        )
        x, columns = build_features(ds, config, cache_dir)
        model, history, mg = train_gnn(ds.graph, ds.table, ds.masks, gcfg, features=x)
        scores = predict(model, x, mg)
        log_rows = [{"epoch": h.epoch, "train_loss": h.train_loss, "val_loss": h.val_loss,
                     "val_auc_pr": h.val_auc_pr} for h in history]
        val_ap = history[-1].val_auc_pr
        state = model.state_dict()
    else:
        x, columns = build_features(ds, config, cache_dir)
        decoder, log_rows = train_decoder(
            x, labels, ds.masks.train, ds.masks.val, hp["number_of_layers_decoder"], hp["hidden_dimension_decoder"],
            hp["learning_rate"], hp["number_of_epochs_decoder"], method_seed, hp["class_weighting"])
        scores = illicit_probability(decoder(x))
        val_ap = log_rows[-1].get("val_auc_pr", float("nan"))
        state = decoder.state_dict()
    test = ScoredNodes.from_mask(scores, labels, ds.masks.test)
    report = None
    if evaluate:
        thresholds = resolve_thresholds(config, ds)
        if config.is_gnn:
            report = mask_halving_report(test, config.halving_repetitions, derive_seed(config.seed, "eval", config.method),
                                         thresholds)
        else:
            report = bootstrap_report(test, config.bootstrap_repetitions, derive_seed(config.seed, "eval", config.method),
                                      thresholds)
    return MethodResult(config.method, report, test, val_ap, log_rows, state, columns,
                        seconds=time.perf_counter() - t0, extra={"tool_version": __version__})


def validation_objective(ds: Dataset, method: str, base_config: RunConfig | None = None, cache_dir=None):
    """Objective for the tuner: trial config -> validation AUC-PR."""
    def objective(trial_hp, trial_seed):
        cfg = RunConfig(method=method, seed=trial_seed,
                        hyperparams={**(base_config.hyperparams if base_config else {}), **trial_hp})
        result = run_method(ds, cfg, cache_dir=cache_dir, evaluate=False)
        return result.val_auc_pr
    return objective
