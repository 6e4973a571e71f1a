"""Ranking and threshold metrics computed from a single score vector."""

from __future__ import annotations

import math

import numpy as np


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size != y.size:
        raise ValueError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise ValueError("metric needs both classes present in labels")
    return s, y


def _doubled_midranks(x):
    """Twice the 1-based mid-rank of every entry, as exact integers."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(x.size, dtype=np.int64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i: j + 1]] = i + j + 2
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney statistic with mid-ranks for ties.

    Ranks are kept doubled so the statistic is an exact integer ratio and a
    single division rounds it.
    """
    s, y = _check_binary(scores, labels)
    r2 = _doubled_midranks(s)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u2 = int(r2[y].sum()) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision: sum over distinct thresholds of (delta recall) x precision."""
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each block of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp, fp = tp[ends], fp[ends]
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def sens_spec(scores, labels, threshold=0.5) -> tuple[float, float]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    pred = s >= threshold
    tp = np.sum(pred & y)
    fn = np.sum(~pred & y)
    tn = np.sum(~pred & ~y)
    fp = np.sum(pred & ~y)
    sens = tp / (tp + fn) if tp + fn else math.nan
    spec = tn / (tn + fp) if tn + fp else math.nan
    return float(sens), float(spec)


def rmse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0 or p.size != t.size:
        raise ValueError(f"rmse needs equal non-empty inputs, got {p.size} and {t.size}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


METRIC_COLUMNS = ("auroc", "auprc", "sensitivity", "specificity", "rmse")


def metric_report(scores, labels, regression=False, threshold=0.5) -> dict[str, float]:
    """All metrics from one score vector; inapplicable entries are NaN."""
    out = dict.fromkeys(METRIC_COLUMNS, math.nan)
    if regression:
        out["rmse"] = rmse(scores, labels)
        return out
    out["auroc"] = auroc(scores, labels)
    out["auprc"] = auprc(scores, labels)
    out["sensitivity"], out["specificity"] = sens_spec(scores, labels, threshold)
    return out
