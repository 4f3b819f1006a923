"""Run configuration: method, seed, thresholds and the tuned hyperparameters.

Config files are flat ``key = value`` text; hyperparameter keys are the
snake-cased names of the tuning table rows (``learning_rate``,
``number_of_epochs_decoder``, ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .graph import format_kv, parse_kv
from .hypertune import base_method

TABULAR_METHODS = ("intrinsic", "manual", "deepwalk", "deepwalk-ni", "node2vec", "node2vec-ni")
GNN_METHODS = ("gcn", "graphsage", "gat", "gin")
METHODS = TABULAR_METHODS + GNN_METHODS

TUNED = {
    "intrinsic": {"learning_rate": 0.0163, "number_of_layers_decoder": 1, "hidden_dimension_decoder": 5,
                  "number_of_epochs_decoder": 497},
    "manual": {"random_jump_parameter": 0.593, "learning_rate": 0.0166, "number_of_layers_decoder": 1,
               "hidden_dimension_decoder": 6, "number_of_epochs_decoder": 64},
    "deepwalk": {"number_of_walks_per_node": 2, "walk_length": 3, "word2vec_context_window_size": 2,
                 "latent_dimension": 5, "number_of_negative_samples": 1, "learning_rate": 0.0554,
                 "number_of_epochs": 176, "number_of_epochs_decoder": 80},
    "node2vec": {"number_of_walks_per_node": 1, "walk_length": 9, "word2vec_context_window_size": 5,
                 "latent_dimension": 47, "number_of_negative_samples": 1, "return_parameter": 1.17,
                 "in_out_parameter": 1.60, "learning_rate": 0.0159, "number_of_epochs": 222,
                 "number_of_epochs_decoder": 93},
    "gcn": {"latent_dimension": 87, "gnn_hidden_dimensions": 217, "gnn_layers": 3, "dropout_rate": 0.057,
            "learning_rate": 0.0864, "number_of_epochs": 174},
    "graphsage": {"latent_dimension": 77, "gnn_hidden_dimensions": 192, "gnn_layers": 1,
                  "number_of_neighbourhood_samples": 2, "aggregator": "max", "dropout_rate": 0.345,
                  "learning_rate": 0.0690, "number_of_epochs": 494},
    "gat": {"latent_dimension": 104, "gnn_layers": 1, "number_of_heads": 1, "dropout_rate": 0.471,
            "learning_rate": 0.0487, "number_of_epochs": 282},
    "gin": {"latent_dimension": 98, "gnn_layers": 1, "dropout_rate": 0.384, "learning_rate": 0.0452,
            "number_of_epochs": 42},
}

# untuned settings; the walk-embedding decoder keeps the fixed 2 x 10 architecture
DEFAULTS = {
    "number_of_layers_decoder": 2,
    "hidden_dimension_decoder": 10,
    "random_jump_parameter": 0.593,
    "betweenness_pivots": 2000,
    "eigenvector_tol": 1e-8,
    "eigenvector_max_iter": 1000,
    "directed_mp": False,
    "class_weighting": False,
    "per_period_centralities": False,
}

_INT_KEYS = {"number_of_walks_per_node", "walk_length", "word2vec_context_window_size", "latent_dimension",
             "number_of_negative_samples", "number_of_epochs", "number_of_epochs_decoder",
             "gnn_hidden_dimensions", "gnn_layers", "number_of_neighbourhood_samples", "number_of_heads",
             "number_of_layers_decoder", "hidden_dimension_decoder", "betweenness_pivots",
             "eigenvector_max_iter", "seed", "bootstrap_repetitions", "halving_repetitions", "threads"}
_FLOAT_KEYS = {"random_jump_parameter", "return_parameter", "in_out_parameter", "learning_rate",
               "dropout_rate", "eigenvector_tol"}
_BOOL_KEYS = {"directed_mp", "class_weighting", "per_period_centralities"}


def coerce(key, value):
    if not isinstance(value, str):
        return value
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {value!r}")
        return value.lower() in ("true", "1", "yes")
    return value


def parse_thresholds(text):
    """``"0.1,1,2,10,p"`` -> ``[0.1, 1.0, 2.0, 10.0, "p"]``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if part == "p":
            out.append("p")
            continue
        k = float(part)
        if not 0 < k <= 100:
            raise ValueError(f"threshold {k} outside (0, 100]")
        out.append(k)
    return out


@dataclass
class RunConfig:
    method: str
    dataset_dir: str = "data/elliptic"
    seed: int = 0
    # "p" is the labelled-train prevalence; 2% is reported alongside it as a fixed threshold
    thresholds: list = field(default_factory=lambda: [0.1, 1.0, 2.0, 10.0, "p"])
    prevalence_percent: float | None = None  # None -> labelled-train prevalence
    bootstrap_repetitions: int = 100
    halving_repetitions: int = 100
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")

    @property
    def base(self):
        return base_method(self.method)

    @property
    def is_gnn(self):
        return self.method in GNN_METHODS

    def resolved(self) -> dict:
        """Defaults, then tuned values, then explicit overrides."""
        hp = dict(DEFAULTS)
        hp.update(TUNED[self.base])
        hp.update({k: coerce(k, v) for k, v in self.hyperparams.items()})
        return hp

    def to_kv(self, extra=None) -> str:
        data = {
            "method": self.method,
            "seed": self.seed,
            "dataset_dir": self.dataset_dir,
            "thresholds": ",".join(str(t) for t in self.thresholds),
            "prevalence_percent": "" if self.prevalence_percent is None else self.prevalence_percent,
            "bootstrap_repetitions": self.bootstrap_repetitions,
            "halving_repetitions": self.halving_repetitions,
        }
        data.update({k: v for k, v in sorted(self.resolved().items())})
        data.update(extra or {})
        return format_kv(data)

    @classmethod
    def from_kv(cls, text, **overrides):
        raw = parse_kv(text)
        raw.update({k: v for k, v in overrides.items() if v is not None})
        fields_ = {}
        for key in ("method", "dataset_dir"):
            if key in raw:
                fields_[key] = raw.pop(key)
        if "seed" in raw:
            fields_["seed"] = int(raw.pop("seed"))
        if "thresholds" in raw:
            fields_["thresholds"] = parse_thresholds(raw.pop("thresholds"))
        prev = raw.pop("prevalence_percent", "")
        if prev not in ("", None):
            fields_["prevalence_percent"] = float(prev)
        for key in ("bootstrap_repetitions", "halving_repetitions"):
            if key in raw:
                fields_[key] = int(raw.pop(key))
        for key in ("tool_version", "manifest_hash", "columns_hash", "threads"):
            raw.pop(key, None)
        fields_["hyperparams"] = {k: coerce(k, v) for k, v in raw.items()}
        if "method" not in fields_:
            raise ValueError("config needs a 'method' entry")
        return cls(**fields_)
