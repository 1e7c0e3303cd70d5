"""Partition agreement and feature-selection accuracy."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import UsageError


def contingency(a, b) -> np.ndarray:
    """Overlap counts between two labelings (rows: distinct values of ``a``)."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise UsageError(f"label vectors differ in length ({a.size} vs {b.size})")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max(initial=-1) + 1, ib.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1) / 2.0


def ari_from_contingency(table) -> float:
    """Hubert-Arabie adjusted Rand index from an overlap table."""
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or np.any(table < 0):
        raise UsageError("contingency table must be a nonnegative matrix")
    n = table.sum()
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    top = 0.5 * (sum_a + sum_b)
    if top == expected:
        # both partitions trivial (all singletons or one block)
        return 1.0
    return float((sum_ij - expected) / (top - expected))


def ari(a, b) -> float:
    return ari_from_contingency(contingency(a, b))


def align_labels(true, est):
    """Map each estimated label to a true label by maximum overlap.

    Returns ``{est_label: true_label}``; estimated clusters left unmatched
    (when there are more of them) are absent from the map.
    """
    true = np.asarray(true).ravel()
    est = np.asarray(est).ravel()
    tv, ti = np.unique(true, return_inverse=True)
    ev, ei = np.unique(est, return_inverse=True)
    table = np.zeros((tv.size, ev.size), dtype=np.int64)
    np.add.at(table, (ti, ei), 1)
    r, c = linear_sum_assignment(-table)
    return {ev[j].item(): tv[i].item() for i, j in zip(r, c)}


def clustering_error(true, est) -> float:
    """Misclassification rate after the optimal one-to-one label matching."""
    table = contingency(true, est)
    if table.size == 0:
        return 0.0
    r, c = linear_sum_assignment(-table)
    return float(1.0 - table[r, c].sum() / table.sum())


def _canonical_rows(S):
    S = np.asarray(S, dtype=bool).copy()
    if S.ndim == 2 and S.shape[1] > 1:
        one_zero = S.sum(axis=1) == S.shape[1] - 1
        S[one_zero] = True
    return S


def align_selection(S_est, labels_true, labels_est, K_true):
    """Reorder the cluster axis of a ``(p, K_est)`` selection matrix to the
    true clusters ``1..K_true``; unmatched true clusters get no selection.
    Works for boolean selections and for selection probabilities."""
    S_est = np.asarray(S_est)
    mapping = align_labels(labels_true, labels_est)
    out = np.zeros((S_est.shape[0], K_true), dtype=S_est.dtype)
    for e, t in mapping.items():
        if 1 <= t <= K_true and 1 <= e <= S_est.shape[1]:
            out[:, t - 1] = S_est[:, e - 1]
    return out


def feature_recovery(S_true, S_est) -> float:
    """Fraction of columns whose canonical selection pattern is recovered.

    Accepts vectors (one global selection bit per column) or ``(p, K)``
    matrices whose cluster axes are already aligned.
    """
    S_true = np.asarray(S_true, dtype=bool)
    S_est = np.asarray(S_est, dtype=bool)
    if S_true.shape != S_est.shape:
        raise UsageError(f"selection shapes differ: {S_true.shape} vs {S_est.shape}")
    if S_true.size == 0:
        return 1.0
    a, b = _canonical_rows(S_true), _canonical_rows(S_est)
    if a.ndim == 1:
        return float(np.mean(a == b))
    return float(np.mean(np.all(a == b, axis=1)))


def confusion_rates(S_true, S_est):
    """Entrywise ``(FPR, FNR, TNR)`` of selection bits (canonical for matrices).

    A rate whose denominator is empty is reported as 0.
    """
    S_true = np.asarray(S_true, dtype=bool)
    S_est = np.asarray(S_est, dtype=bool)
    if S_true.shape != S_est.shape:
        raise UsageError(f"selection shapes differ: {S_true.shape} vs {S_est.shape}")
    a, b = _canonical_rows(S_true), _canonical_rows(S_est)
    neg = ~a
    pos = a
    fp = np.sum(b & neg)
    fn = np.sum(~b & pos)
    fpr = fp / neg.sum() if neg.any() else 0.0
    fnr = fn / pos.sum() if pos.any() else 0.0
    tnr = 1.0 - fpr if neg.any() else 0.0
    return float(fpr), float(fnr), float(tnr)
