"""Glue from raw records to per-task feature matrices."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Sequence

from .features import EpisodeRow, FeatureAssembler, FeatureMatrix, FeatureSchema, build_rows, task_rows
from .network import DailyContactGraph, NetworkFeatures, WardTransferGraph, compute_network_features
from .records import BedDayRecord, Cohort, Episode, LabeledEpisode, apply_filters, chronological_split, derive_labels


@dataclass
class PreparedData:
    cohort: Cohort
    labeled: list[LabeledEpisode]
    network: dict[str, NetworkFeatures]
    ward_graph: WardTransferGraph
    graphs: list[DailyContactGraph]
    train_rows: list[EpisodeRow]
    test_rows: list[EpisodeRow]

    @property
    def split_date(self) -> dt.date:
        return self.cohort.split_date


def prepare(episodes: Sequence[Episode], beddays: Sequence[BedDayRecord], train_fraction=0.9, damping=0.85):
    """Labels, filters, chronological split, contact network and raw feature rows."""
    labeled = derive_labels(episodes)
    cohort = chronological_split(apply_filters(labeled, history=episodes), train_fraction)
    network, ward_graph, graphs = compute_network_features(
        episodes, beddays, ward_window_end=cohort.split_date, damping=damping
    )
    rows = build_rows(cohort.episodes, labeled, network, beddays)
    train = [r for r in rows if r.episode_id in cohort.train_ids]
    test = [r for r in rows if r.episode_id in cohort.test_ids]
    return PreparedData(cohort, labeled, network, ward_graph, graphs, train, test)


def task_matrices(data: PreparedData, task: str) -> tuple[FeatureMatrix, FeatureMatrix, FeatureSchema]:
    """Fit the schema on the task's training rows and transform both partitions."""
    train_rows = task_rows(data.train_rows, task)
    test_rows = task_rows(data.test_rows, task)
    if not train_rows or not test_rows:
        raise ValueError(f"task {task!r} has {len(train_rows)} train and {len(test_rows)} test rows")
    assembler = FeatureAssembler(task).fit(train_rows)
    return assembler.transform(train_rows), assembler.transform(test_rows), assembler.schema_
