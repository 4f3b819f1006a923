"""Threshold-free and top-k% metrics plus the two resampling protocols.

Tabular methods use the bootstrap (same-size resample with replacement);
GNNs use test-mask halving (score a random half of the labelled test nodes).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .seeding import make_rng

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.1, 1.0, 10.0)
METRIC_NAMES = ("auc_roc", "auc_pr")


@dataclass(frozen=True, eq=False)
class ScoredNodes:
    score: np.ndarray
    label: np.ndarray  # 1 illicit, 0 licit
    node: np.ndarray = None

    def __post_init__(self):
        score = np.asarray(self.score, dtype=np.float64)
        label = np.asarray(self.label).astype(np.int8)
        node = np.arange(len(score)) if self.node is None else np.asarray(self.node, dtype=np.int64)
        if not (score.shape == label.shape == node.shape):
            raise ValueError("score, label and node must have equal length")
        if not np.isfinite(score).all():
            raise ValueError("scores must be finite")
        if np.any((label != 0) & (label != 1)):
            raise ValueError("labels must be 0 (licit) or 1 (illicit); drop unknown nodes first")
        object.__setattr__(self, "score", score)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "node", node)

    def __len__(self):
        return len(self.score)

    def take(self, idx) -> "ScoredNodes":
        return ScoredNodes(self.score[idx], self.label[idx], self.node[idx])

    @classmethod
    def from_mask(cls, scores, labels, mask):
        """Labelled nodes under ``mask`` (labels use -1 for unknown)."""
        labels = np.asarray(labels)
        idx = np.flatnonzero(np.asarray(mask, dtype=bool) & (labels >= 0))
        return cls(np.asarray(scores)[idx], labels[idx], idx)


def auc_roc(scored: ScoredNodes) -> float:
    """Mann–Whitney AUC: P(illicit outranks licit), ties count one half."""
    pos = scored.label == 1
    n_pos = int(pos.sum())
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc needs both classes")
    ranks = rankdata(scored.score)  # average ranks handle ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(scored: ScoredNodes) -> float:
    """Step-wise area under the precision–recall curve (average precision).

    Sweeps distinct scores from high to low; each recall increment is
    weighted by the precision reached at that threshold.
    """
    n_pos = int((scored.label == 1).sum())
    if n_pos == 0:
        raise ValueError("auc_pr needs at least one illicit node")
    order = np.argsort(-scored.score, kind="mergesort")
    s = scored.score[order]
    y = scored.label[order].astype(np.float64)
    # last index of each block of tied scores
    ends = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(y)[ends]
    flagged = ends + 1.0
    precision = tp / flagged
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def flagged_count(n, k_percent) -> int:
    if not 0 < k_percent <= 100:
        raise ValueError("k_percent must be in (0, 100]")
    return int(math.ceil(k_percent / 100.0 * n - 1e-9))


def top_k_order(scored: ScoredNodes) -> np.ndarray:
    """Positions sorted by score descending, then node index ascending."""
    return np.lexsort((scored.node, -scored.score))


def topk_metrics(scored: ScoredNodes, k_percent):
    """Precision, recall and F1 when the top ``k_percent``% scores are flagged."""
    m = flagged_count(len(scored), k_percent)
    if m == 0:
        raise ValueError(f"top {k_percent}% of {len(scored)} nodes flags nothing")
    n_pos = int((scored.label == 1).sum())
    hits = int(scored.label[top_k_order(scored)[:m]].sum())
    precision = hits / m
    recall = hits / n_pos if n_pos else 0.0
    if n_pos:
        assert abs(recall - precision * m / n_pos) < 1e-12
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def threshold_items(thresholds):
    """Normalise thresholds to ``(tag, percent)``; entries may already be pairs."""
    out = []
    for t in thresholds:
        if isinstance(t, (tuple, list)):
            out.append((str(t[0]), float(t[1])))
        else:
            out.append((f"top{float(t):g}", float(t)))
    return out


def compute_metrics(scored: ScoredNodes, thresholds) -> dict:
    out = {"auc_roc": auc_roc(scored), "auc_pr": auc_pr(scored)}
    for tag, k in threshold_items(thresholds):
        p, r, f = topk_metrics(scored, k)
        out[f"{tag}_precision"] = p
        out[f"{tag}_recall"] = r
        out[f"{tag}_f1"] = f
    return out


@dataclass
class EvalReport:
    mean: dict
    std: dict
    thresholds: tuple
    repetitions: int
    protocol: str
    full: dict = field(default_factory=dict)  # metrics on the untouched test set

    def rows(self, method):
        return [(method, name, self.mean[name], self.std[name]) for name in self.mean]

    def write_csv(self, path, method):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "metric", "mean", "std"])
            for row in self.rows(method):
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3])])

    def format(self, method) -> str:
        lines = [f"{method} ({self.protocol}, {self.repetitions} resamples)"]
        for name in self.mean:
            lines.append(f"  {name:<18} {self.mean[name]:.4f} ± {self.std[name]:.4f}")
        return "\n".join(lines)


def _aggregate(samples, thresholds, repetitions, protocol, full):
    names = list(samples[0])
    arr = np.array([[s[n] for n in names] for s in samples])
    mean = dict(zip(names, arr.mean(axis=0).tolist()))
    std = dict(zip(names, arr.std(axis=0).tolist()))
    return EvalReport(mean=mean, std=std, thresholds=tuple(thresholds), repetitions=repetitions,
                      protocol=protocol, full=full)


def _both_classes(labels):
    return labels.min() != labels.max()


def bootstrap_report(scored: ScoredNodes, repetitions=100, seed=0, thresholds=DEFAULT_THRESHOLDS,
                     max_redraws=1000) -> EvalReport:
    """Metric mean and (population) std over same-size resamples with replacement.

    Resamples that miss a class are redrawn.
    """
    if repetitions < 2:
        raise ValueError("bootstrap needs at least 2 repetitions")
    rng = make_rng(seed, "bootstrap")
    n = len(scored)
    samples = []
    redraws = 0
    while len(samples) < repetitions:
        idx = rng.integers(0, n, size=n)
        if not _both_classes(scored.label[idx]):
            redraws += 1
            if redraws > max_redraws:
                raise ValueError("bootstrap keeps drawing single-class resamples")
            continue
        samples.append(compute_metrics(scored.take(idx), thresholds))
    if redraws:
        log.info("bootstrap redrew %d single-class resamples", redraws)
    return _aggregate(samples, thresholds, repetitions, "bootstrap", compute_metrics(scored, thresholds))


def mask_halving_report(scored: ScoredNodes, repetitions=100, seed=0, thresholds=DEFAULT_THRESHOLDS,
                        max_redraws=1000) -> EvalReport:
    """Metric mean and std over random halves of the labelled test nodes."""
    n = len(scored)
    if n < 4:
        raise ValueError("mask halving needs at least 4 labelled test nodes")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if repetitions == 1:
        log.warning("mask halving with a single repetition: std is 0 by construction")
    rng = make_rng(seed, "mask-halving")
    half = n // 2
    samples = []
    redraws = 0
    while len(samples) < repetitions:
        idx = np.sort(rng.choice(n, size=half, replace=False))
        if not _both_classes(scored.label[idx]):
            redraws += 1
            if redraws > max_redraws:
                raise ValueError("mask halving keeps drawing single-class halves")
            continue
        samples.append(compute_metrics(scored.take(idx), thresholds))
    return _aggregate(samples, thresholds, repetitions, "mask-halving", compute_metrics(scored, thresholds))


def pr_curve(scored: ScoredNodes):
    """(recall, precision, threshold) points of the step curve, for plotting."""
    n_pos = int((scored.label == 1).sum())
    order = np.argsort(-scored.score, kind="mergesort")
    s = scored.score[order]
    y = scored.label[order]
    ends = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(y)[ends]
    return tp / n_pos, tp / (ends + 1.0), s[ends]


def roc_curve(scored: ScoredNodes):
    order = np.argsort(-scored.score, kind="mergesort")
    s = scored.score[order]
    y = scored.label[order]
    ends = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    n_pos = max(1, int(y.sum()))
    n_neg = max(1, len(y) - int(y.sum()))
    return np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos], np.r_[np.inf, s[ends]]
