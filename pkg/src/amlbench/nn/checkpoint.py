"""Named-parameter checkpoints in ``.npz`` form (bit-exact round trip)."""

import numpy as np


def save_checkpoint(path, state: dict, meta: dict | None = None):
    arrays = {f"param/{k}": np.asarray(v) for k, v in state.items()}
    for k, v in (meta or {}).items():
        arrays[f"meta/{k}"] = np.asarray(str(v))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        state = {k[6:]: z[k].copy() for k in z.files if k.startswith("param/")}
        meta = {k[5:]: str(z[k]) for k in z.files if k.startswith("meta/")}
    return state, meta
