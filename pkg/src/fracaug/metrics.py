"""Ranking and thresholded metrics for binary anomaly scores."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .exceptions import ContractError, UndefinedMetricError


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ContractError(f"scores and labels differ in length: {scores.size} vs {labels.size}")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative (ties count 1/2)."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    ranks = rankdata(scores)  # average ranks resolve ties as halves
    u = float(ranks[labels == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision over descending unique score thresholds."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of each block of tied scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    ap = 0.0
    prev_recall = 0.0
    for k in ends:
        recall = tp[k] / n_pos
        precision = tp[k] / (tp[k] + fp[k])
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


def macro_f1(scores, labels, threshold: float = 0.5) -> float:
    """Unweighted mean of per-class F1 with predictions ``score >= threshold``."""
    scores, labels = _validate(scores, labels)
    pred = (scores >= threshold).astype(np.int64)
    f1s = []
    for cls in (0, 1):
        tp = int(np.sum((pred == cls) & (labels == cls)))
        fp = int(np.sum((pred == cls) & (labels != cls)))
        fn = int(np.sum((pred != cls) & (labels == cls)))
        if tp + fp + fn == 0:
            f1s.append(1.0)
        else:
            f1s.append(2.0 * tp / (2.0 * tp + fp + fn))
    return float(np.mean(f1s))


def evaluate(scores, labels, threshold: float = 0.5) -> dict[str, float]:
    return {
        "auroc": auroc(scores, labels),
        "auprc": auprc(scores, labels),
        "f1": macro_f1(scores, labels, threshold),
    }
