"""Feature rankings from attribution runs and their aggregation over models and folds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AttributionRun:
    task: str
    model: str
    fold: str
    feature_names: list[str]
    mean_abs: np.ndarray

    @property
    def ranks(self) -> np.ndarray:
        return dense_rank(self.mean_abs, self.feature_names)


def mean_abs_attribution(attributions) -> np.ndarray:
    a = np.asarray(attributions, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError(f"expected a non-empty (samples, features) array, got shape {a.shape}")
    return np.abs(a).mean(axis=0)


def dense_rank(scores, names) -> np.ndarray:
    """Rank 1 for the largest score; ties are ordered by name, so ranks are a permutation of 1..n."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(names) != scores.size:
        raise ValueError("scores and names differ in length")
    order = sorted(range(scores.size), key=lambda i: (-scores[i], names[i]))
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(1, scores.size + 1)
    return ranks


@dataclass
class AttributionReport:
    task: str
    feature_names: list[str]
    runs: list[AttributionRun]
    rank_matrix: np.ndarray  # (runs, features)
    median_rank: np.ndarray
    iqr_lo: np.ndarray
    iqr_hi: np.ndarray

    def median_rank_of(self, name) -> float:
        return float(self.median_rank[self.feature_names.index(name)])

    def order(self):
        """Feature indices from most to least important by median rank (then name)."""
        return sorted(range(len(self.feature_names)), key=lambda i: (self.median_rank[i], self.feature_names[i]))


def aggregate_ranks(runs) -> AttributionReport:
    """Median and interquartile range (linear interpolation) of per-run ranks."""
    runs = list(runs)
    if not runs:
        raise ValueError("need at least one attribution run")
    names = list(runs[0].feature_names)
    for r in runs[1:]:
        if list(r.feature_names) != names:
            if sorted(r.feature_names) != sorted(names):
                raise ValueError(f"run {r.model}/{r.fold} has a different feature set")
            raise ValueError(f"run {r.model}/{r.fold} lists features in a different order")
    tasks = {r.task for r in runs}
    if len(tasks) != 1:
        raise ValueError(f"runs mix tasks {sorted(tasks)}")
    ranks = np.vstack([r.ranks for r in runs]).astype(np.float64)
    lo, med, hi = np.percentile(ranks, [25, 50, 75], axis=0)
    return AttributionReport(runs[0].task, names, runs, ranks, med, lo, hi)


def code_ranking(code_attributions, vocab, feature_scores=None, feature_names=None):
    """Rank codes by mean |attribution|.

    Code-only by default. With ``feature_scores`` and ``feature_names`` the
    codes are ranked jointly with the non-code features.
    Returns ``(names, mean_abs, ranks)``.
    """
    scores = mean_abs_attribution(code_attributions)
    names = list(vocab)
    if feature_scores is not None:
        names = names + list(feature_names)
        scores = np.concatenate([scores, np.asarray(feature_scores, dtype=np.float64)])
    return names, scores, dense_rank(scores, names)
