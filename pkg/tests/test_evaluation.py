import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import average_precision_score, roc_auc_score

from amlbench.seeding import make_rng
from amlbench.evaluation import (ScoredNodes, auc_pr, auc_roc, bootstrap_report, compute_metrics, flagged_count,
                                 mask_halving_report, pr_curve, roc_curve, threshold_items, topk_metrics)


def pairwise_auc(score, label):
    pos = score[label == 1]
    neg = score[label == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def enumerated_ap(score, label):
    """Average precision by enumerating every distinct threshold, high to low."""
    n_pos = label.sum()
    total, prev_recall = 0.0, 0.0
    for thr in sorted(set(score.tolist()), reverse=True):
        flagged = score >= thr
        tp = label[flagged].sum()
        recall = tp / n_pos
        total += (recall - prev_recall) * (tp / flagged.sum())
        prev_recall = recall
    return total


def random_fixture(rng, n):
    label = rng.integers(0, 2, size=n)
    label[0], label[1] = 0, 1
    # coarse scores force ties
    score = rng.integers(0, max(2, n // 3), size=n) / 7.0 if rng.random() < 0.5 else rng.random(n)
    return ScoredNodes(score, label)


def test_auc_fixture():
    s = ScoredNodes([0.9, 0.4, 0.6, 0.2], [1, 1, 0, 0])
    assert auc_roc(s) == 0.75


def test_topk_fixture():
    s = ScoredNodes([3.0, 2.0, 1.0], [1, 0, 1])
    p, r, f = topk_metrics(s, 100 / 3)
    assert (p, r) == (1.0, 0.5) and abs(f - 2 / 3) < 1e-15


def test_topk_tie_break_by_node_index():
    s = ScoredNodes([1.0, 1.0, 1.0, 1.0], [0, 1, 1, 0], node=[7, 3, 5, 9])
    # one of four flagged: the lowest node index among the tie, node 3, is illicit
    assert topk_metrics(s, 25)[0] == 1.0
    s = ScoredNodes([1.0, 1.0, 1.0, 1.0], [0, 1, 1, 0], node=[2, 3, 5, 9])
    assert topk_metrics(s, 25)[0] == 0.0


def test_flagged_count():
    assert flagged_count(1000, 0.1) == 1
    assert flagged_count(1000, 1) == 10
    assert flagged_count(999, 1) == 10
    assert flagged_count(100, 10) == 10
    with pytest.raises(ValueError):
        flagged_count(10, 0)


def test_topk_precision_recall_identity():
    rng = np.random.default_rng(0)
    s = random_fixture(rng, 200)
    for k in (0.5, 1, 5, 10, 50):
        p, r, _ = topk_metrics(s, k)
        m = flagged_count(len(s), k)
        assert abs(r - p * m / s.label.sum()) < 1e-12


def test_single_class_rejected():
    with pytest.raises(ValueError):
        auc_roc(ScoredNodes([0.1, 0.2], [0, 0]))
    with pytest.raises(ValueError):
        auc_pr(ScoredNodes([0.1, 0.2], [0, 0]))
    with pytest.raises(ValueError):
        ScoredNodes([0.1, 0.2], [0, -1])
    with pytest.raises(ValueError):
        ScoredNodes([0.1, np.nan], [0, 1])


@pytest.mark.parametrize("seed", range(100))
def test_oracles_randomised(seed):
    rng = np.random.default_rng(seed)
    s = random_fixture(rng, int(rng.integers(2, 120)))
    assert auc_roc(s) == pairwise_auc(s.score, s.label)
    assert abs(auc_pr(s) - enumerated_ap(s.score, s.label)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 300), st.integers(0, 10_000))
def test_matches_sklearn(n, seed):
    rng = np.random.default_rng(seed)
    s = random_fixture(rng, n)
    assert abs(auc_roc(s) - roc_auc_score(s.label, s.score)) < 1e-12
    assert abs(auc_pr(s) - average_precision_score(s.label, s.score)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 200), st.integers(0, 10_000))
def test_metrics_invariant_to_monotone_transform(n, seed):
    s = random_fixture(np.random.default_rng(seed), n)
    t = ScoredNodes(np.exp(3 * s.score) + 1, s.label)
    assert auc_roc(s) == auc_roc(t) and auc_pr(s) == auc_pr(t)


def test_perfect_and_reversed_scores():
    label = np.array([0] * 8 + [1] * 2)
    s = ScoredNodes(np.arange(10.0), label)
    assert auc_roc(s) == 1.0 and auc_pr(s) == 1.0
    r = ScoredNodes(-np.arange(10.0), label)
    assert auc_roc(r) == 0.0


def test_threshold_items_and_names():
    assert threshold_items([0.1, ("top_p", 2.2)]) == [("top0.1", 0.1), ("top_p", 2.2)]
    m = compute_metrics(ScoredNodes([0.3, 0.9, 0.1], [0, 1, 0]), [10, ("top_p", 50)])
    assert set(m) == {"auc_roc", "auc_pr", "top10_precision", "top10_recall", "top10_f1",
                      "top_p_precision", "top_p_recall", "top_p_f1"}


def test_bootstrap_deterministic_and_shape():
    rng = np.random.default_rng(1)
    s = random_fixture(rng, 300)
    a = bootstrap_report(s, repetitions=30, seed=4)
    b = bootstrap_report(s, repetitions=30, seed=4)
    assert a.mean == b.mean and a.std == b.std
    assert a.protocol == "bootstrap" and a.repetitions == 30
    c = bootstrap_report(s, repetitions=30, seed=5)
    assert c.mean != a.mean


def test_bootstrap_needs_two_repetitions():
    with pytest.raises(ValueError):
        bootstrap_report(ScoredNodes([0.1, 0.9], [0, 1]), repetitions=1)


def test_bootstrap_std_shrinks_with_duplication():
    # duplicating the data set halves the variance: std ratio near 1/sqrt(2)
    rng = np.random.default_rng(2)
    n = 400
    label = (rng.random(n) < 0.2).astype(int)
    score = rng.normal(size=n) + 1.2 * label
    s1 = ScoredNodes(score, label)
    s2 = ScoredNodes(np.r_[score, score], np.r_[label, label])
    r1 = bootstrap_report(s1, repetitions=400, seed=0, thresholds=())
    r2 = bootstrap_report(s2, repetitions=400, seed=1, thresholds=())
    ratio = r2.std["auc_roc"] / r1.std["auc_roc"]
    assert abs(ratio - 1 / math.sqrt(2)) < 0.1


def test_bootstrap_std_is_population_std():
    s = random_fixture(np.random.default_rng(3), 50)
    rep = bootstrap_report(s, repetitions=5, seed=0, thresholds=())
    rng = make_rng(0, "bootstrap")
    vals = []
    while len(vals) < 5:
        idx = rng.integers(0, 50, size=50)
        if s.label[idx].min() != s.label[idx].max():
            vals.append(auc_roc(s.take(idx)))
    assert abs(rep.std["auc_roc"] - np.std(vals)) < 1e-15


def test_bootstrap_redraws_single_class():
    # 1 positive among 30: many resamples miss it and must be redrawn
    label = np.zeros(30, dtype=int)
    label[0] = 1
    s = ScoredNodes(np.linspace(0, 1, 30), label)
    rep = bootstrap_report(s, repetitions=20, seed=0, thresholds=())
    assert rep.repetitions == 20 and np.isfinite(rep.mean["auc_roc"])


def test_mask_halving():
    s = random_fixture(np.random.default_rng(4), 101)
    rep = mask_halving_report(s, repetitions=10, seed=2)
    assert rep.protocol == "mask-halving"
    assert rep.std["auc_roc"] > 0
    assert rep.full["auc_roc"] == auc_roc(s)


def test_mask_halving_single_repetition_warns(caplog):
    s = random_fixture(np.random.default_rng(5), 40)
    rep = mask_halving_report(s, repetitions=1, seed=0, thresholds=())
    assert rep.std["auc_roc"] == 0.0
    assert "single repetition" in caplog.text


def test_report_csv(tmp_path):
    s = random_fixture(np.random.default_rng(6), 80)
    rep = bootstrap_report(s, repetitions=5, seed=0, thresholds=(1.0,))
    path = tmp_path / "m.csv"
    rep.write_csv(path, "intrinsic")
    lines = path.read_text().splitlines()
    assert lines[0] == "method,metric,mean,std"
    assert lines[1].startswith("intrinsic,auc_roc,")
    assert "intrinsic" in rep.format("intrinsic")


def test_curves_consistent_with_auc():
    s = random_fixture(np.random.default_rng(7), 200)
    fpr, tpr, _ = roc_curve(s)
    assert abs(np.trapezoid(tpr, fpr) - auc_roc(s)) < 1e-12
    recall, precision, _ = pr_curve(s)
    assert abs(np.sum(np.diff(np.r_[0.0, recall]) * precision) - auc_pr(s)) < 1e-12
