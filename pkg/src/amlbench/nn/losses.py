from __future__ import annotations

import numpy as np

from . import tensor as T


def class_weights_from(labels):
    """Inverse-prevalence weights for classes (0, 1) among labelled entries."""
    labels = np.asarray(labels)
    labels = labels[labels >= 0]
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    return np.where(counts > 0, len(labels) / (2.0 * np.maximum(counts, 1.0)), 0.0)


def masked_cross_entropy(logits, labels, mask, class_weights=None):
    """Mean NLL over nodes that are in ``mask`` and carry a label (0/1).

    Unknown nodes (label < 0) never reach the loss. With ``class_weights``
    the mean is weighted, normalised by the summed weights.
    """
    labels = np.asarray(labels)
    idx = np.flatnonzero(np.asarray(mask, dtype=bool) & (labels >= 0))
    if len(idx) == 0:
        raise ValueError("masked_cross_entropy: no labelled nodes under mask")
    y = labels[idx].astype(np.int64)
    logp = T.log_softmax(T.gather(logits, idx))
    picked = np.zeros((len(idx), 2))
    w = np.ones(len(idx)) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[y]
    picked[np.arange(len(idx)), y] = w / w.sum()
    return T.mul(T.sum(T.mul(logp, picked)), -1.0)
