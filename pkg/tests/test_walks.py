import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2, chisquare

from amlbench.graph import undirected_view
from amlbench.walks import (EmbeddingMatrix, WalkConfig, embed, generate_walks, sample_walk_deepwalk,
                            sample_walk_node2vec, train_skipgram, transition_probs)
from conftest import graph_from_pairs

# 5 nodes: triangle 0-1-2, node 3 hangs off 1 and 2, node 4 hangs off 3
FIVE = [(0, 1), (1, 2), (0, 2), (1, 3), (2, 3), (3, 4)]


def und(n, pairs):
    return undirected_view(graph_from_pairs(n, pairs))


def alpha_oracle(g, t, v, p, q):
    """Normalised alpha weights by brute-force shortest-path distance d(t, x)."""
    a = g.adjacency().toarray()
    w = []
    for x in g.neighbors(v):
        if x == t:
            w.append(1 / p)
        elif a[t, x]:
            w.append(1.0)
        else:
            w.append(1 / q)
    w = np.array(w)
    return w / w.sum()


def test_alpha_weight_cases():
    g = und(5, FIVE)
    # t=0 -> v=1; neighbours of 1 are 0 (return), 2 (adjacent to 0), 3 (distance 2)
    probs = transition_probs(g, 0, 1, p=0.5, q=2.0)
    assert g.neighbors(1).tolist() == [0, 2, 3]
    w = np.array([2.0, 1.0, 0.5])
    assert np.allclose(probs, w / w.sum(), rtol=0, atol=1e-15)


def test_transition_probs_match_oracle_everywhere():
    g = und(5, FIVE)
    for t in range(5):
        for v in g.neighbors(t):
            for p, q in [(0.5, 2.0), (1.17, 1.6), (3.0, 0.25)]:
                assert np.allclose(transition_probs(g, t, v, p, q), alpha_oracle(g, t, v, p, q), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=30))
def test_p1_q1_equals_deepwalk_exactly(n, pairs):
    pairs = [(a % n, b % n) for a, b in pairs]
    g = und(n, pairs)
    for t in range(n):
        for v in g.neighbors(t):
            assert np.array_equal(transition_probs(g, t, v, 1.0, 1.0), transition_probs(g, t, v, method="deepwalk"))
    # same stream -> same walks
    for start in range(n):
        a = sample_walk_node2vec(g, start, 12, 1.0, 1.0, np.random.default_rng(start))
        b = sample_walk_deepwalk(g, start, 12, np.random.default_rng(start))
        assert np.array_equal(a, b)


def test_node2vec_empirical_frequencies_chi2():
    g = und(5, FIVE)
    p, q = 0.5, 2.0
    rng = np.random.default_rng(123)
    counts = {}
    steps = 0
    starts = [0, 1, 2, 3]
    while steps < 100_000:
        t = starts[steps % len(starts)]
        walk = sample_walk_node2vec(g, t, 3, p, q, rng)
        key = (int(walk[0]), int(walk[1]))
        counts.setdefault(key, np.zeros(len(g.neighbors(key[1])), dtype=np.int64))
        counts[key][int(np.searchsorted(g.neighbors(key[1]), walk[2]))] += 1
        steps += 1
    assert sum(c.sum() for c in counts.values()) == 100_000
    assert pooled_chi2_pvalue(g, counts, p, q) > 0.01


def pooled_chi2_pvalue(g, counts, p, q):
    """One goodness-of-fit test over every observed (t, v) context."""
    stat, dof = 0.0, 0
    for (t, v), c in counts.items():
        expected = alpha_oracle(g, t, v, p, q) * c.sum()
        stat += float(((c - expected) ** 2 / expected).sum())
        dof += len(c) - 1
    return chi2.sf(stat, dof)


def test_first_step_uniform_chi2():
    g = und(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    rng = np.random.default_rng(7)
    counts = np.zeros(4, dtype=np.int64)
    for _ in range(100_000):
        counts[sample_walk_deepwalk(g, 0, 2, rng)[1]] += 1
    assert counts[0] == 0 and counts[2] == 0
    assert chisquare(counts[[1, 3]]).pvalue > 0.01


def test_path_middle_start():
    g = und(3, [(0, 1), (1, 2)])
    seen = {int(sample_walk_deepwalk(g, 1, 2, np.random.default_rng(s))[1]) for s in range(50)}
    assert seen == {0, 2}


def test_isolated_node_walk():
    g = und(3, [(0, 1)])
    assert sample_walk_deepwalk(g, 2, 5, np.random.default_rng(0)).tolist() == [2]
    assert sample_walk_node2vec(g, 2, 5, 1.0, 2.0, np.random.default_rng(0)).tolist() == [2]


def test_walks_follow_edges_and_lengths():
    g = und(5, FIVE)
    corpus = generate_walks(g, WalkConfig(walks_per_node=3, walk_length=6, seed=2, p=0.7, q=1.4))
    a = g.adjacency().toarray()
    assert len(corpus) == 15
    for seq in corpus.sequences():
        assert len(seq) == 6
        for x, y in zip(seq[:-1], seq[1:]):
            assert a[x, y] == 1


def test_corpus_seeded():
    g = und(5, FIVE)
    cfg = WalkConfig(walks_per_node=2, walk_length=7, seed=11)
    assert np.array_equal(generate_walks(g, cfg).walks, generate_walks(g, cfg).walks)
    other = WalkConfig(walks_per_node=2, walk_length=7, seed=12)
    assert not np.array_equal(generate_walks(g, cfg).walks, generate_walks(g, other).walks)


def test_corpus_dump(tmp_path):
    g = und(3, [(0, 1)])
    corpus = generate_walks(g, WalkConfig(walks_per_node=1, walk_length=3, method="deepwalk"))
    path = tmp_path / "walks.txt"
    corpus.dump(path, node_ids=np.array([10, 11, 12]))
    lines = path.read_text().splitlines()
    assert lines[2] == "12"
    assert lines[0].split()[0] == "10"


def test_two_cliques_separate():
    k1 = [(i, j) for i in range(6) for j in range(i + 1, 6)]
    k2 = [(i, j) for i in range(6, 12) for j in range(i + 1, 12)]
    g = und(12, k1 + k2)
    cfg = WalkConfig(walks_per_node=10, walk_length=10, window=3, latent_dim=2, negatives_per_positive=3,
                     epochs=20, learning_rate=0.025, seed=1, method="deepwalk")
    v = embed(g, cfg).vectors
    u = v / np.linalg.norm(v, axis=1, keepdims=True)
    cos = u @ u.T
    same = np.add.outer(np.arange(12) < 6, np.arange(12) < 6) != 1
    off = ~np.eye(12, dtype=bool)
    assert cos[same & off].mean() > cos[~same].mean()


def test_single_node_corpus_finite():
    g = und(1, [])
    emb = embed(g, WalkConfig(walks_per_node=2, walk_length=4, latent_dim=3, epochs=3))
    assert emb.vectors.shape == (1, 3) and np.isfinite(emb.vectors).all()
    assert all(np.isfinite(x) for x in emb.losses)


def test_skipgram_loss_decreases():
    g = und(5, FIVE)
    cfg = WalkConfig(walks_per_node=5, walk_length=8, window=2, latent_dim=4, epochs=30, learning_rate=0.01, seed=3)
    emb = train_skipgram(generate_walks(g, cfg), 5, cfg)
    assert emb.losses[-1] < emb.losses[0]


def test_embedding_deterministic_and_csv(tmp_path):
    g = und(5, FIVE)
    cfg = WalkConfig(walks_per_node=2, walk_length=5, latent_dim=3, epochs=4, seed=8)
    a = embed(g, cfg)
    b = embed(g, cfg)
    assert np.array_equal(a.vectors, b.vectors)
    path = tmp_path / "emb.csv"
    a.write_csv(path, np.arange(5) + 100)
    back, ids = EmbeddingMatrix.read_csv(path)
    assert np.array_equal(back.vectors, a.vectors) and ids.tolist() == [100, 101, 102, 103, 104]


def test_tuned_dimensions():
    g = und(5, FIVE)
    assert embed(g, WalkConfig(latent_dim=47, epochs=1, walk_length=9, window=5)).vectors.shape == (5, 47)


def test_bad_parameters():
    g = und(3, [(0, 1)])
    with pytest.raises(ValueError):
        sample_walk_node2vec(g, 0, 3, 0.0, 1.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_walk_deepwalk(g, 0, 0, np.random.default_rng(0))
