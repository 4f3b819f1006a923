"""Small Elliptic-shaped datasets for tests.

Nodes live in 49 time steps with edges only inside a step. Illicit labels
depend on a couple of local features and on neighbour labels, so every
method has some signal to find.
"""

from __future__ import annotations

import numpy as np

from amlbench.graph import NUM_AGGREGATED, NUM_LOCAL, NUM_TIME_STEPS, Label, NodeTable, TransactionGraph


def make_dataset(nodes_per_step=20, seed=0, illicit_rate=0.15, unknown_rate=0.5, edges_per_node=1.5, signal=1.5):
    rng = np.random.default_rng(seed)
    n = nodes_per_step * NUM_TIME_STEPS
    time_step = np.repeat(np.arange(1, NUM_TIME_STEPS + 1), nodes_per_step)
    src, dst = [], []
    for t in range(NUM_TIME_STEPS):
        base = t * nodes_per_step
        m = int(edges_per_node * nodes_per_step)
        a = rng.integers(0, nodes_per_step, size=m) + base
        b = rng.integers(0, nodes_per_step, size=m) + base
        keep = a != b
        src.append(a[keep])
        dst.append(b[keep])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    pairs = np.unique(np.stack([src, dst], axis=1), axis=0)
    src, dst = pairs[:, 0], pairs[:, 1]

    latent = rng.normal(size=n)
    # one round of smoothing so neighbours share risk
    deg = np.bincount(np.r_[src, dst], minlength=n) + 1.0
    agg = latent.copy()
    np.add.at(agg, src, latent[dst])
    np.add.at(agg, dst, latent[src])
    risk = agg / deg
    cut = np.quantile(risk, 1 - illicit_rate)
    illicit = risk >= cut

    local = rng.normal(size=(n, NUM_LOCAL))
    local[:, 0] = time_step
    local[:, 1] += signal * illicit
    local[:, 2] += 0.8 * latent
    aggregated = rng.normal(size=(n, NUM_AGGREGATED))
    aggregated[:, 0] += 0.5 * illicit

    label = np.where(illicit, int(Label.ILLICIT), int(Label.LICIT)).astype(np.int8)
    label[rng.random(n) < unknown_rate] = int(Label.UNKNOWN)
    node_ids = rng.permutation(np.arange(10_000, 10_000 + 3 * n))[:n]
    graph = TransactionGraph.from_edges(n, src, dst, time_step=time_step, node_ids=node_ids)
    return graph, NodeTable(local_features=local, aggregated_features=aggregated, label=label)
