from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def auc(scores, labels) -> float:
    """ROC AUC in Mann-Whitney form; tied scores count one half.

    Computed from midranks, so the result equals the pairwise concordance
    count divided by ``n_pos * n_neg``.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_stderr(auc_value: float, n_pos: int, n_neg: int) -> float:
    """Hanley-McNeil standard error of an AUC estimate."""
    a = auc_value
    q1 = a / (2.0 - a)
    q2 = 2.0 * a * a / (1.0 + a)
    var = (a * (1 - a) + (n_pos - 1) * (q1 - a * a) + (n_neg - 1) * (q2 - a * a)) / (n_pos * n_neg)
    return float(np.sqrt(max(var, 0.0)))


def accuracy(preds, truth) -> float:
    preds = np.asarray(preds).ravel()
    truth = np.asarray(truth).ravel()
    if preds.shape != truth.shape:
        raise ValueError("preds and truth differ in length")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(preds == truth))


def mean_stderr(values) -> tuple[float, float]:
    """Sample mean and ``sd / sqrt(m)`` with the m-1 variance denominator."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("need at least 2 values for a standard error")
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))
