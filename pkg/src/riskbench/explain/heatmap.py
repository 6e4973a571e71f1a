"""Per-patient episode-by-ICD-chapter attribution heatmaps."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .icd import CHAPTER_LABELS, OTHER, icd_chapter
from .ig import IGConfig, integrated_gradients

DIAGNOSIS_FIELD = "diagnosis_codes"


@dataclass
class EpisodeHeatmap:
    patient_id: str
    episode_ids: list[str]
    admission_dates: list
    groups: list[str]
    values: np.ndarray  # (groups, episodes)

    def dominant_group(self, column) -> str:
        return self.groups[int(np.argmax(self.values[:, column]))]

    def to_csv(self) -> str:
        lines = ["group," + ",".join(self.episode_ids)]
        for g, row in zip(self.groups, self.values):
            lines.append(g + "," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def chapter_groups(vocab):
    """Chapter label per vocabulary entry and the ordered list of chapters present."""
    labels = [icd_chapter(c) for c in vocab]
    present = set(labels)
    order = [c for c in (*CHAPTER_LABELS, OTHER) if c in present]
    return labels, order


def patient_heatmap(model, X, patient_id, steps=256, field=DIAGNOSIS_FIELD) -> EpisodeHeatmap:
    """One IG run per episode of ``patient_id``; |code attributions| summed per ICD chapter.

    Columns follow admission dates.
    """
    rows = [i for i, p in enumerate(X.patient_ids) if p == patient_id]
    if len(rows) < 2:
        raise ValueError(f"patient {patient_id} has {len(rows)} episodes; a heatmap needs at least 2")
    rows.sort(key=lambda i: (X.admission_dates[i], X.episode_ids[i]))
    sub = X.take(rows)
    result = integrated_gradients(model, sub, IGConfig(steps=steps))
    vocab = X.schema.code_vocabularies[field]
    labels, groups = chapter_groups(vocab)
    index = {g: k for k, g in enumerate(groups)}
    code_group = np.array([index[g] for g in labels], dtype=np.int64)
    values = np.zeros((len(groups), len(rows)))
    mags = np.abs(result.code_attributions[field])
    for j in range(len(rows)):
        np.add.at(values[:, j], code_group, mags[j])
    return EpisodeHeatmap(patient_id, sub.episode_ids, sub.admission_dates, groups, values)


def pick_heatmap_patient(X, label="readmit_30d", min_episodes=3):
    """Patient with the most positive ``label`` episodes among those with enough episodes; ties by id."""
    counts = Counter(X.patient_ids)
    positives = Counter(p for p, y in zip(X.patient_ids, X.labels[label]) if y == 1)
    eligible = [p for p, c in counts.items() if c >= min_episodes] or [p for p, c in counts.items() if c >= 2]
    if not eligible:
        raise ValueError("no patient has at least 2 episodes")
    return min(eligible, key=lambda p: (-positives[p], -counts[p], p))
