"""Evaluation metrics and cross-seed/cross-dataset aggregation.

Four metric kinds: plain accuracy, mean-per-class accuracy (unweighted mean of
per-class recall), binary ROC AUC in the rank (Mann-Whitney) formulation with
midrank tie handling, and VOC-2007-style 11-point interpolated mAP scored per
class column. All are rank- or argmax-based, hence invariant under strictly
increasing transforms of the logits.
"""
import dataclasses

import numpy as np


class MetricError(Exception):
    """Raised when a metric is undefined for the given labels."""


@dataclasses.dataclass
class MetricResult:
    kind: str
    value: float
    n: int
    skipped_classes: list = dataclasses.field(default_factory=list)


def compute_metric(kind, logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError(f"logits must be 2-D, got shape {logits.shape}")
    n = logits.shape[0]
    if n < 1:
        raise MetricError("no samples to score")
    if kind == "accuracy":
        value, skipped = _accuracy(logits, labels), []
    elif kind == "mean-per-class":
        value, skipped = _mean_per_class(logits, labels)
    elif kind == "roc-auc":
        value, skipped = _roc_auc(logits, labels), []
    elif kind == "map-11pt":
        value, skipped = _map_11pt(logits, labels)
    else:
        raise ValueError(f"unknown metric kind {kind!r}")
    return MetricResult(kind=kind, value=float(value), n=n, skipped_classes=skipped)


def _accuracy(logits, labels):
    labels = np.asarray(labels)
    preds = np.argmax(logits, axis=1)
    return (preds == labels).mean()


def _mean_per_class(logits, labels):
    labels = np.asarray(labels)
    preds = np.argmax(logits, axis=1)
    recalls, skipped = [], []
    for c in range(logits.shape[1]):
        mask = labels == c
        if not mask.any():
            skipped.append(c)
            continue
        recalls.append((preds[mask] == c).mean())
    if not recalls:
        raise MetricError("no class present in the labels")
    return float(np.mean(recalls)), skipped


def _roc_auc(logits, labels):
    """Probability a random positive outranks a random negative, ties count 1/2.

    Class 1 is the positive class; scores are the class-1 minus class-0 logits.
    """
    if logits.shape[1] != 2:
        raise MetricError(f"roc-auc needs exactly 2 classes, got {logits.shape[1]}")
    labels = np.asarray(labels)
    scores = logits[:, 1] - logits[:, 0]
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"roc-auc undefined: {n_pos} positives, {n_neg} negatives")
    ranks = _midranks(scores)
    r_pos = ranks[pos].sum()
    return (r_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def _midranks(scores):
    n = len(scores)
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and s[j + 1] == s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _map_11pt(logits, labels):
    """Mean over classes of 11-point interpolated average precision.

    Each class is ranked by its own logit column against its 0/1 membership
    column. Tied scores are treated as one threshold block. Classes with zero
    positives are skipped and recorded. Recall-level comparisons are done in
    integer arithmetic (10*tp >= level*n_pos) so grid points are exact.
    """
    labels = np.asarray(labels)
    if labels.shape != logits.shape:
        raise MetricError(f"map-11pt needs (n, K) membership labels matching "
                          f"logits, got {labels.shape} vs {logits.shape}")
    aps, skipped = [], []
    for c in range(logits.shape[1]):
        ap = _ap_11pt(logits[:, c], labels[:, c] != 0)
        if ap is None:
            skipped.append(c)
        else:
            aps.append(ap)
    if not aps:
        raise MetricError("map-11pt undefined: no class has positives")
    return float(np.mean(aps)), skipped


def _ap_11pt(scores, positives):
    n_pos = int(positives.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = positives[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    # one curve point per distinct threshold: keep the end of each tie block
    keep = np.append(np.nonzero(s[1:] != s[:-1])[0], len(s) - 1)
    tp, fp = tp[keep], fp[keep]
    precision = tp / (tp + fp)
    total = 0.0
    for level in range(11):
        qualifying = 10 * tp >= level * n_pos
        total += precision[qualifying].max()
    return total / 11.0


# ---------------------------------------------------------------------------
# aggregation over seeds and datasets

@dataclasses.dataclass
class GroupStat:
    values: list    # per-seed metric values, seed order
    mean: float
    std: float      # sample (n-1) std; 0.0 when n == 1
    n: int


@dataclasses.dataclass
class AggregateResult:
    setting: tuple        # (mode, init, knowledge, shots)
    per_dataset: dict     # dataset name -> GroupStat
    cross_mean: float     # unweighted mean of per-dataset means


def _stat(values):
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return GroupStat(values=list(arr), mean=float(arr.mean()), std=std, n=len(arr))


def aggregate_runs(records):
    """Group records into per-setting tables: mean +- sample std over seeds
    per dataset, plus the unweighted cross-dataset mean. Canonically sorted.
    Records must expose dataset/mode/init_kind/knowledge/shots/seed/value.
    """
    groups = {}
    for r in records:
        if r.value is None:
            continue
        setting = (r.mode, r.init_kind, r.knowledge, str(r.shots))
        cell = groups.setdefault(setting, {}).setdefault(r.dataset, [])
        cell.append((r.seed, r.value))
    if any(not ds for ds in groups.values()):
        raise ValueError("empty aggregation group")
    results = []
    for setting in sorted(groups):
        per_dataset = {}
        for dataset in sorted(groups[setting]):
            pairs = sorted(groups[setting][dataset])
            per_dataset[dataset] = _stat([v for _, v in pairs])
        cross = float(np.mean([g.mean for g in per_dataset.values()]))
        results.append(AggregateResult(setting=setting, per_dataset=per_dataset,
                                       cross_mean=cross))
    return results
