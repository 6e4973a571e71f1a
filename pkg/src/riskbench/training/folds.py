"""Patient-grouped, outcome-stratified k-fold plans."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: tuple[tuple[str, ...], ...]
    assignment: dict

    def validation_ids(self, fold):
        return self.folds[fold]

    def train_ids(self, fold):
        return tuple(e for i, f in enumerate(self.folds) if i != fold for e in f)

    def fold_of(self, episode_id):
        return self.assignment[episode_id]

    def to_rows(self):
        return [(e, i) for i, f in enumerate(self.folds) for e in f]


def make_folds(episode_ids, patient_ids, labels, k=5, seed=0) -> FoldPlan:
    """Greedy assignment of whole patients to folds.

    Patients are shuffled, then stably sorted by positive-episode count
    (descending) and episode count (descending). A patient with a positive
    episode goes to the fold with the fewest positives; any other patient goes
    to the fold with the fewest negatives. Ties fall to fewest episodes, then
    fold index.
    """
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    episode_ids = list(episode_ids)
    patient_ids = list(patient_ids)
    y = np.nan_to_num(np.asarray(labels, dtype=np.float64))
    if not len(episode_ids) == len(patient_ids) == y.size:
        raise ValueError("episode_ids, patient_ids and labels must have equal length")
    members = defaultdict(list)
    for i, p in enumerate(patient_ids):
        members[p].append(i)
    patients = sorted(members)
    if len(patients) < k:
        raise ValueError(f"{len(patients)} patients cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    patients = [patients[i] for i in rng.permutation(len(patients))]
    pos = {p: int((y[members[p]] > 0).sum()) for p in patients}
    patients.sort(key=lambda p: (-pos[p], -len(members[p])))
    fold_pos = [0] * k
    fold_neg = [0] * k
    fold_n = [0] * k
    folds = [[] for _ in range(k)]
    for p in patients:
        count = fold_pos if pos[p] else fold_neg
        f = min(range(k), key=lambda j: (count[j], fold_n[j], j))
        fold_pos[f] += pos[p]
        fold_neg[f] += len(members[p]) - pos[p]
        fold_n[f] += len(members[p])
        folds[f].extend(members[p])
    out = tuple(tuple(episode_ids[i] for i in sorted(f)) for f in folds)
    assignment = {e: i for i, f in enumerate(out) for e in f}
    return FoldPlan(k, out, assignment)
