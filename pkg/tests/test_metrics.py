"""Metric implementations against brute-force oracles, plus aggregation."""
import dataclasses
from fractions import Fraction

import numpy as np
import pytest

from embeval.metrics import (MetricError, aggregate_runs, compute_metric)


# ---------------------------------------------------------------------------
# oracles

def pair_counting_auc(scores, labels):
    """O(n^2) positive-outranks-negative probability, ties count 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def threshold_sweep_ap(scores, positives):
    """11-point interpolated AP via an exact-rational threshold sweep."""
    n_pos = sum(positives)
    if n_pos == 0:
        return None
    points = []
    for t in sorted(set(scores), reverse=True):
        keep = [p for s, p in zip(scores, positives) if s >= t]
        tp = sum(keep)
        points.append((Fraction(tp, n_pos), Fraction(tp, len(keep))))
    total = Fraction(0)
    for level in range(11):
        r = Fraction(level, 10)
        total += max(prec for rec, prec in points if rec >= r)
    return float(total / 11)


# ---------------------------------------------------------------------------
# accuracy / mean-per-class

def test_accuracy_trivial():
    logits = np.eye(4)
    res = compute_metric("accuracy", logits, np.arange(4))
    assert res.value == 1.0 and res.n == 4
    res = compute_metric("accuracy", logits, np.array([1, 0, 2, 3]))
    assert res.value == 0.5


def test_mean_per_class_unweighted():
    # class 0: 1 sample correct; class 1: 3 samples, 1 correct -> (1 + 1/3)/2
    logits = np.array([[2.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 0.0]])
    labels = np.array([0, 1, 1, 1])
    res = compute_metric("mean-per-class", logits, labels)
    assert res.value == pytest.approx(2 / 3, rel=1e-12)


def test_mean_per_class_skips_absent_classes():
    logits = np.zeros((3, 4))
    logits[np.arange(3), [0, 1, 1]] = 1.0
    res = compute_metric("mean-per-class", logits, np.array([0, 1, 1]))
    assert res.skipped_classes == [2, 3]
    assert res.value == 1.0


def test_accuracy_equals_mean_per_class_when_balanced():
    rng = np.random.default_rng(3)
    for _ in range(20):
        k = rng.integers(2, 5)
        per = rng.integers(2, 9)
        labels = np.repeat(np.arange(k), per)
        logits = rng.standard_normal((len(labels), k))
        acc = compute_metric("accuracy", logits, labels).value
        mpc = compute_metric("mean-per-class", logits, labels).value
        assert acc == pytest.approx(mpc, rel=1e-12)


# ---------------------------------------------------------------------------
# roc-auc

def _auc_logits(scores):
    # engine scores rank by logits[:,1] - logits[:,0]
    logits = np.zeros((len(scores), 2))
    logits[:, 1] = scores
    return logits


def test_auc_extremes():
    labels = np.array([0, 0, 1, 1])
    assert compute_metric("roc-auc", _auc_logits([0.1, 0.2, 0.8, 0.9]),
                          labels).value == 1.0
    assert compute_metric("roc-auc", _auc_logits([0.9, 0.8, 0.2, 0.1]),
                          labels).value == 0.0


def test_auc_degenerate_labels_error():
    with pytest.raises(MetricError, match="positives"):
        compute_metric("roc-auc", _auc_logits([0.1, 0.2]), np.array([0, 0]))


def test_auc_matches_pair_counting_oracle():
    rng = np.random.default_rng(7)
    for trial in range(200):
        n = int(rng.integers(4, 40))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        if trial % 2:  # heavy ties from a small score alphabet
            scores = rng.choice([0.0, 0.25, 0.5, 1.0], size=n)
        else:
            scores = rng.standard_normal(n)
        got = compute_metric("roc-auc", _auc_logits(scores), labels).value
        assert got == pair_counting_auc(list(scores), list(labels))


def test_auc_monotone_transform_invariant():
    rng = np.random.default_rng(8)
    scores = rng.standard_normal(30)
    labels = rng.integers(0, 2, 30)
    labels[:2] = [0, 1]
    a = compute_metric("roc-auc", _auc_logits(scores), labels).value
    b = compute_metric("roc-auc", _auc_logits(np.exp(scores) * 3), labels).value
    assert a == pytest.approx(b, abs=1e-12)


# ---------------------------------------------------------------------------
# 11-point mAP

def test_ap_worked_example():
    # one class, scores (0.9, 0.8, 0.1), truth (+, -, +) -> AP = 28/33
    logits = np.array([[0.9], [0.8], [0.1]])
    labels = np.array([[1], [0], [1]])
    res = compute_metric("map-11pt", logits, labels)
    assert res.value == pytest.approx(28 / 33, abs=1e-12)


def test_map_matches_threshold_sweep_oracle():
    rng = np.random.default_rng(9)
    for trial in range(200):
        n = int(rng.integers(2, 31))
        k = int(rng.integers(1, 6))
        labels = (rng.random((n, k)) < 0.4).astype(np.uint8)
        if trial % 2:
            logits = rng.choice([0.0, 0.5, 1.0, 2.0], size=(n, k))
        else:
            logits = rng.standard_normal((n, k))
        want_aps = [threshold_sweep_ap(list(logits[:, c]),
                                       list(labels[:, c] != 0))
                    for c in range(k)]
        usable = [a for a in want_aps if a is not None]
        if not usable:
            with pytest.raises(MetricError):
                compute_metric("map-11pt", logits, labels)
            continue
        res = compute_metric("map-11pt", logits, labels)
        assert res.value == pytest.approx(np.mean(usable), abs=1e-12)
        assert res.skipped_classes == [c for c, a in enumerate(want_aps)
                                       if a is None]


def test_map_monotone_transform_invariant():
    rng = np.random.default_rng(10)
    logits = rng.standard_normal((20, 3))
    labels = (rng.random((20, 3)) < 0.5).astype(np.uint8)
    labels[0] = 1
    a = compute_metric("map-11pt", logits, labels).value
    b = compute_metric("map-11pt", 2 * logits + 5, labels).value
    assert a == pytest.approx(b, abs=1e-13)


# ---------------------------------------------------------------------------
# aggregation

@dataclasses.dataclass
class FakeRecord:
    dataset: str
    mode: str = "lp"
    init_kind: str = "lang-sep"
    knowledge: str = "none"
    shots: object = 5
    seed: int = 0
    value: float = 0.0


def test_aggregate_mean_and_sample_std():
    records = [FakeRecord("d", seed=s, value=v)
               for s, v in [(0, 1.0), (1, 2.0), (2, 3.0)]]
    [agg] = aggregate_runs(records)
    stat = agg.per_dataset["d"]
    assert stat.mean == 2.0 and stat.std == pytest.approx(1.0)
    assert stat.n == 3


def test_aggregate_single_seed_flagged():
    [agg] = aggregate_runs([FakeRecord("d", value=0.7)])
    stat = agg.per_dataset["d"]
    assert stat.std == 0.0 and stat.n == 1


def test_cross_dataset_unweighted_mean():
    records = []
    for name, vals in [("a", [0.2]), ("b", [0.4]), ("c", [0.9])]:
        records += [FakeRecord(name, seed=s, value=v) for s, v in enumerate(vals)]
    [agg] = aggregate_runs(records)
    assert agg.cross_mean == pytest.approx(0.5, abs=1e-15)


def test_aggregate_groups_by_setting():
    records = [FakeRecord("d", mode="lp", value=0.5),
               FakeRecord("d", mode="ft-proj", value=0.6),
               FakeRecord("d", mode="lp", shots=20, value=0.7)]
    aggs = aggregate_runs(records)
    assert len(aggs) == 3
    assert [a.setting[0] for a in aggs] == ["ft-proj", "lp", "lp"]
