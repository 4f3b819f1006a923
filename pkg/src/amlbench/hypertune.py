"""Search over the tuning ranges, keeping the config with the best validation AUC-PR."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_seed, make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntRange:
    low: int
    high: int

    def sample(self, rng):
        return int(rng.integers(self.low, self.high + 1))

    def contains(self, value):
        return isinstance(value, (int, np.integer)) and self.low <= value <= self.high


@dataclass(frozen=True)
class RealRange:
    low: float
    high: float

    def sample(self, rng):
        return float(rng.uniform(self.low, self.high))

    def contains(self, value):
        return isinstance(value, (int, float, np.floating)) and self.low <= value <= self.high


@dataclass(frozen=True)
class Categorical:
    choices: tuple

    def sample(self, rng):
        return self.choices[int(rng.integers(len(self.choices)))]

    def contains(self, value):
        return value in self.choices


@dataclass
class HyperSpace:
    params: dict

    def __post_init__(self):
        if not self.params:
            raise ValueError("empty hyperparameter space")

    def validate(self, config: dict):
        missing = set(self.params) - set(config)
        if missing:
            raise ValueError(f"config misses {sorted(missing)}")
        for name, dom in self.params.items():
            if not dom.contains(config[name]):
                raise ValueError(f"{name}={config[name]!r} outside {dom}")


# Ranges per hyperparameter row; keys are the snake-cased row names.
RANGES = {
    "random_jump_parameter": RealRange(0.1, 0.9),
    "number_of_walks_per_node": IntRange(1, 3),
    "walk_length": IntRange(3, 10),
    "word2vec_context_window_size": IntRange(2, 10),
    "latent_dimension_walk": IntRange(2, 64),
    "latent_dimension_gnn": IntRange(32, 128),
    "return_parameter": RealRange(0.5, 2.0),
    "in_out_parameter": RealRange(0.5, 2.0),
    "number_of_negative_samples": IntRange(1, 5),
    "gnn_hidden_dimensions": IntRange(64, 256),
    "gnn_layers": IntRange(1, 3),
    "number_of_neighbourhood_samples": IntRange(2, 5),
    "learning_rate": RealRange(0.01, 0.1),
    "aggregator": Categorical(("min", "mean", "max")),
    "number_of_heads": IntRange(1, 5),
    "dropout_rate": RealRange(0.0, 0.5),
    "number_of_layers_decoder": IntRange(1, 3),
    "hidden_dimension_decoder": IntRange(5, 20),
    "number_of_epochs_decoder": IntRange(5, 500),
    "number_of_epochs_decoder_embedding": IntRange(5, 100),
    "number_of_epochs": IntRange(5, 500),
}

_WALK = ["number_of_walks_per_node", "walk_length", "word2vec_context_window_size", "latent_dimension",
         "number_of_negative_samples", "learning_rate", "number_of_epochs", "number_of_epochs_decoder"]
_GNN = ["latent_dimension", "gnn_layers", "learning_rate", "dropout_rate", "number_of_epochs"]

METHOD_PARAMS = {
    "intrinsic": ["learning_rate", "number_of_layers_decoder", "hidden_dimension_decoder",
                  "number_of_epochs_decoder"],
    "manual": ["random_jump_parameter", "learning_rate", "number_of_layers_decoder",
               "hidden_dimension_decoder", "number_of_epochs_decoder"],
    "deepwalk": _WALK,
    "node2vec": _WALK + ["return_parameter", "in_out_parameter"],
    "gcn": _GNN + ["gnn_hidden_dimensions"],
    "graphsage": _GNN + ["gnn_hidden_dimensions", "number_of_neighbourhood_samples", "aggregator"],
    "gat": _GNN + ["number_of_heads"],
    "gin": list(_GNN),
}

TRIAL_BUDGETS = {"deepwalk": 50, "node2vec": 50, "gcn": 100, "graphsage": 100, "gat": 100, "gin": 100,
                 "intrinsic": 50, "manual": 50}


def base_method(method: str) -> str:
    return method[:-3] if method.endswith("-ni") else method


def space_for(method: str) -> HyperSpace:
    method = base_method(method)
    params = {}
    for name in METHOD_PARAMS[method]:
        if name == "latent_dimension":
            key = "latent_dimension_gnn" if method in ("gcn", "graphsage", "gat", "gin") else "latent_dimension_walk"
            params[name] = RANGES[key]
        elif name == "number_of_epochs_decoder" and method in ("deepwalk", "node2vec"):
            params[name] = RANGES["number_of_epochs_decoder_embedding"]
        else:
            params[name] = RANGES[name]
    return HyperSpace(params)


def default_budget(method: str) -> int:
    return TRIAL_BUDGETS[base_method(method)]


# ---------------------------------------------------------------------------
# samplers

def _tpe_numeric(dom, good, bad, rng, n_candidates=24):
    lo, hi = float(dom.low), float(dom.high)
    width = hi - lo if hi > lo else 1.0

    def bandwidth(values):
        return max(width / 10.0, width * len(values) ** -0.2 / 3.0) if len(values) else width

    def density(x, values):
        if not len(values):
            return np.full_like(x, 1.0 / width)
        bw = bandwidth(values)
        z = (x[:, None] - np.asarray(values, dtype=float)[None, :]) / bw
        return np.exp(-0.5 * z * z).mean(axis=1) / (bw * math.sqrt(2 * math.pi)) + 1e-12

    centers = rng.choice(np.asarray(good, dtype=float), size=n_candidates)
    cand = np.clip(centers + rng.normal(0.0, bandwidth(good), size=n_candidates), lo, hi)
    if isinstance(dom, IntRange):
        cand = np.clip(np.round(cand), dom.low, dom.high)
    score = density(cand, good) / density(cand, bad)
    best = cand[int(np.argmax(score))]
    return int(best) if isinstance(dom, IntRange) else float(best)


def _tpe_categorical(dom, good, bad, rng):
    k = len(dom.choices)
    pg = np.array([1.0 + sum(v == c for v in good) for c in dom.choices]) / (k + len(good))
    pb = np.array([1.0 + sum(v == c for v in bad) for c in dom.choices]) / (k + len(bad))
    cand = rng.choice(k, size=24, p=pg)
    return dom.choices[int(cand[np.argmax(pg[cand] / pb[cand])])]


def sample_trial(space: HyperSpace, history, strategy, rng: np.random.Generator, n_startup=10) -> dict:
    """Draw one in-range configuration.

    ``random`` ignores ``history``. ``tpe-lite`` splits finished trials at the
    median objective and, per parameter, proposes candidates around the good
    half, keeping the one with the best good/bad density ratio.
    """
    if strategy not in ("random", "tpe-lite"):
        raise ValueError(f"unknown strategy {strategy!r}")
    ok = [r for r in (history or []) if r.status == "ok" and r.val_auc_pr is not None]
    if strategy == "random" or len(ok) < n_startup:
        return {name: dom.sample(rng) for name, dom in space.params.items()}
    ok = sorted(ok, key=lambda r: r.val_auc_pr, reverse=True)
    split = max(1, len(ok) // 2)
    good, bad = ok[:split], ok[split:]
    config = {}
    for name, dom in space.params.items():
        gv = [r.config[name] for r in good]
        bv = [r.config[name] for r in bad]
        if isinstance(dom, Categorical):
            config[name] = _tpe_categorical(dom, gv, bv, rng)
        else:
            config[name] = _tpe_numeric(dom, gv, bv, rng)
    return config


@dataclass
class TrialRecord:
    trial_id: int
    config: dict
    val_auc_pr: float | None
    seconds: float
    seed: int
    status: str
    error: str = ""

    def to_json(self):
        return json.dumps({"trial_id": self.trial_id, **self.config, "val_auc_pr": self.val_auc_pr,
                           "status": self.status, "seconds": round(self.seconds, 3), "seed": self.seed,
                           "error": self.error}, sort_keys=False)


@dataclass
class SearchResult:
    method: str
    best: dict
    best_record: TrialRecord
    records: list = field(default_factory=list)


def run_search(objective, space: HyperSpace, budget: int, strategy="random", seed=0, method="",
               ledger_path=None) -> SearchResult:
    """Evaluate ``budget`` sampled configs with ``objective(config, seed) -> val AUC-PR``.

    Failing trials are recorded with status ``failed``; only an all-failed
    search raises.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = make_rng(seed, "search", method, strategy)
    records = []
    ledger = open(ledger_path, "a") if ledger_path else None
    try:
        for trial_id in range(budget):
            config = sample_trial(space, records, strategy, rng)
            space.validate(config)
            trial_seed = derive_seed(seed, method, "trial", trial_id)
            t0 = time.perf_counter()
            try:
                value = float(objective(config, trial_seed))
                if not math.isfinite(value):
                    raise ValueError(f"objective returned {value}")
                rec = TrialRecord(trial_id, config, value, time.perf_counter() - t0, trial_seed, "ok")
            except Exception as exc:  # a failed trial is data, not fatal
                log.warning("trial %d failed: %s", trial_id, exc)
                rec = TrialRecord(trial_id, config, None, time.perf_counter() - t0, trial_seed, "failed",
                                  f"{type(exc).__name__}: {exc}")
            records.append(rec)
            if ledger:
                ledger.write(rec.to_json() + "\n")
                ledger.flush()
    finally:
        if ledger:
            ledger.close()
    ok = [r for r in records if r.status == "ok"]
    if not ok:
        raise RuntimeError(f"all {budget} trials failed; last error: {records[-1].error}")
    best = max(ok, key=lambda r: (r.val_auc_pr, -r.trial_id))
    assert all(best.val_auc_pr >= r.val_auc_pr for r in ok)
    return SearchResult(method, dict(best.config), best, records)


def read_ledger(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
