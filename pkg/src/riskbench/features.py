"""Per-episode feature rows and the train-fitted feature schema."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .network import NETWORK_FEATURES, NetworkFeatures, rows_by_episode, ward_sequence
from .records import MISSING, BedDayRecord, LabeledEpisode, generalize_code, group_by_patient

UNK = "UNK"
STD_FLOOR = 1e-6

PAST_FEATURES = (
    "no_previous_admissions",
    "no_previous_readmissions",
    "no_previous_diagnoses",
    "no_previous_comorbidities",
    "no_previous_procedures",
    "no_previous_ward_transfers",
    "previous_los_total",
    "days_since_last_discharge",
)
CURRENT_FEATURES = ("age", "los_days", "n_diagnoses", "n_procedures", "emergency_admission")
WARD_FEATURES = (
    "admission_ward_frequency",
    "discharge_ward_frequency",
    "no_acute_department_visits",
    "no_emergency_department_visits",
)
CPE_NUMERIC = ("cpe_screened", "cpe_positive_ever")
CPE_CATEGORICAL = ("cpe_result",)
CATEGORICAL_FEATURES = ("sex", "area_of_residence", "admission_ward", "discharge_ward")
CODE_FIELDS = ("diagnosis_codes", "procedure_codes")
LABELS = ("readmit_30d", "mortality", "next_los", "cpe_positive")

TASKS = {
    "readmit30": "readmit_30d",
    "mortality": "mortality",
    "los": "next_los",
    "cpe": "cpe_positive",
}
REGRESSION_TASKS = frozenset({"los"})
# wards where at least this share of training admissions arrive as emergencies
ACUTE_EMERGENCY_SHARE = 0.5
ACUTE_MIN_ADMISSIONS = 20


def cpe_feature_names():
    return frozenset(CPE_NUMERIC + CPE_CATEGORICAL)


# ---------------------------------------------------------------------------
# raw rows


@dataclass(frozen=True)
class EpisodeRow:
    """Task-agnostic raw features of one episode, before schema fitting."""

    episode_id: str
    patient_id: str
    admission_date: object
    numeric: Mapping[str, float]
    categorical: Mapping[str, str]
    codes: Mapping[str, tuple[str, ...]]
    history_codes: Mapping[str, tuple[str, ...]]
    # admission wards and emergency flags of prior episodes then the current one
    ward_history: tuple[str, ...]
    emergency_history: tuple[bool, ...]
    labels: Mapping[str, float] = field(default_factory=dict)
    cpe_screened: bool = False


def past_episode_features(history: Sequence[LabeledEpisode], transfers: Mapping[str, int] | None = None,
                          index_admission=None) -> dict[str, float]:
    """Cumulative counts over the episodes strictly before the index episode.

    ``history`` is in admission order. ``transfers`` maps episode id to its
    number of ward transfers.
    """
    transfers = transfers or {}
    out = dict.fromkeys(PAST_FEATURES, 0.0)
    if not history:
        return out
    out["no_previous_admissions"] = float(len(history))
    # the last prior's readmission flag describes the index episode itself
    out["no_previous_readmissions"] = float(sum(h.readmit_30d for h in history[:-1]))
    out["no_previous_diagnoses"] = float(sum(len(h.episode.diagnosis_codes) for h in history))
    out["no_previous_comorbidities"] = float(len({
        generalize_code(c, "diagnosis") for h in history for c in h.episode.diagnosis_codes
    }))
    out["no_previous_procedures"] = float(sum(len(h.episode.procedure_codes) for h in history))
    out["no_previous_ward_transfers"] = float(sum(transfers.get(h.episode_id, 0) for h in history))
    out["previous_los_total"] = float(sum(h.los_days for h in history))
    if index_admission is not None:
        out["days_since_last_discharge"] = float((index_admission - history[-1].episode.discharge_date).days)
    return out


@dataclass(frozen=True)
class WardStats:
    """Ward statistics fitted on training rows."""

    admission_counts: Mapping[str, int]
    acute_wards: frozenset[str]

    @classmethod
    def fit(cls, rows: Sequence[EpisodeRow]):
        counts = Counter(r.categorical["admission_ward"] for r in rows)
        emergencies = Counter(r.categorical["admission_ward"] for r in rows if r.emergency_history[-1])
        acute = frozenset(
            w for w, n in counts.items()
            if n >= ACUTE_MIN_ADMISSIONS and emergencies[w] / n >= ACUTE_EMERGENCY_SHARE
        )
        return cls(dict(sorted(counts.items())), acute)


def ward_transition_features(row: EpisodeRow, stats: WardStats) -> dict[str, float]:
    """Training-set ward frequencies and department visit counts (current episode included)."""
    adm = row.categorical["admission_ward"]
    dis = row.categorical["discharge_ward"]
    return {
        "admission_ward_frequency": float(stats.admission_counts.get(adm, 0)),
        "discharge_ward_frequency": float(stats.admission_counts.get(dis, 0)),
        "no_acute_department_visits": float(sum(w in stats.acute_wards for w in row.ward_history)),
        "no_emergency_department_visits": float(sum(row.emergency_history)),
    }


def cpe_features(episode: LabeledEpisode, history: Sequence[LabeledEpisode] = ()) -> dict:
    ep = episode.episode
    ever = ep.cpe_result == "positive" or any(h.episode.cpe_result == "positive" for h in history)
    return {"cpe_screened": bool(ep.cpe_screened), "cpe_result": ep.cpe_result, "cpe_positive_ever": ever}


def build_rows(
    cohort_episodes: Sequence[LabeledEpisode],
    all_episodes: Sequence[LabeledEpisode],
    network: Mapping[str, NetworkFeatures],
    beddays: Sequence[BedDayRecord] = (),
) -> list[EpisodeRow]:
    """Raw rows for the cohort; history is taken from the unfiltered ``all_episodes``."""
    by_patient = group_by_patient(all_episodes)
    transfers = {
        eid: max(len(ward_sequence(rows)) - 1, 0) for eid, rows in rows_by_episode(beddays).items()
    }
    rows = []
    for le in cohort_episodes:
        ep = le.episode
        hist = by_patient[ep.patient_id]
        pos = next(i for i, h in enumerate(hist) if h.episode_id == ep.episode_id)
        priors = hist[:pos]
        numeric = {
            "age": float(ep.age),
            "los_days": float(le.los_days),
            "n_diagnoses": float(len(ep.diagnosis_codes)),
            "n_procedures": float(len(ep.procedure_codes)),
            "emergency_admission": float(ep.emergency_admission),
        }
        numeric.update(past_episode_features(priors, transfers, ep.admission_date))
        cpe = cpe_features(le, priors)
        numeric["cpe_screened"] = float(cpe["cpe_screened"])
        numeric["cpe_positive_ever"] = float(cpe["cpe_positive_ever"])
        numeric.update((network.get(ep.episode_id) or NetworkFeatures()).as_dict())
        categorical = {
            "sex": ep.sex or MISSING,
            "area_of_residence": ep.area_of_residence or MISSING,
            "admission_ward": ep.admission_ward or MISSING,
            "discharge_ward": ep.discharge_ward or MISSING,
            "cpe_result": cpe["cpe_result"],
        }
        dx_hist = tuple(generalize_code(c, "diagnosis") for h in priors for c in h.episode.diagnosis_codes)
        px_hist = tuple(generalize_code(c, "procedure") for h in priors for c in h.episode.procedure_codes)
        dx_cur = tuple(generalize_code(c, "diagnosis") for c in ep.diagnosis_codes)
        px_cur = tuple(generalize_code(c, "procedure") for c in ep.procedure_codes)
        rows.append(EpisodeRow(
            episode_id=ep.episode_id,
            patient_id=ep.patient_id,
            admission_date=ep.admission_date,
            numeric=numeric,
            categorical=categorical,
            codes={"diagnosis_codes": dx_hist + dx_cur, "procedure_codes": px_hist + px_cur},
            history_codes={"diagnosis_codes": dx_hist, "procedure_codes": px_hist},
            ward_history=tuple(h.episode.admission_ward for h in priors) + (ep.admission_ward,),
            emergency_history=tuple(h.episode.emergency_admission for h in priors) + (ep.emergency_admission,),
            labels={
                "readmit_30d": float(le.readmit_30d),
                "mortality": float(le.mortality),
                "next_los": float(le.next_los) if le.next_los is not None else math.nan,
                "cpe_positive": float(ep.cpe_result == "positive"),
            },
            cpe_screened=ep.cpe_screened,
        ))
    return rows


def task_rows(rows: Sequence[EpisodeRow], task: str) -> list[EpisodeRow]:
    """Rows eligible for a task: screened episodes for CPE, known next stay for LOS."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    if task == "cpe":
        return [r for r in rows if r.cpe_screened]
    if task == "los":
        return [r for r in rows if not math.isnan(r.labels["next_los"])]
    return list(rows)


# ---------------------------------------------------------------------------
# schema and matrix


def task_columns(task: str) -> tuple[tuple[str, ...], tuple[str, ...], bool]:
    """Numeric and categorical inputs for a task, and whether current-episode codes are used.

    The CPE task only sees what is known at admission plus contact metrics:
    CPE screening variables and current-episode code information are dropped.
    """
    numeric = CURRENT_FEATURES + PAST_FEATURES + WARD_FEATURES + CPE_NUMERIC + NETWORK_FEATURES
    categorical = CATEGORICAL_FEATURES + CPE_CATEGORICAL
    if task == "cpe":
        dropped = set(CPE_NUMERIC) | {"n_diagnoses", "n_procedures"}
        numeric = tuple(n for n in numeric if n not in dropped)
        categorical = CATEGORICAL_FEATURES
        return numeric, categorical, False
    return numeric, categorical, True


@dataclass
class FeatureSchema:
    task: str
    numeric_names: list[str]
    means: list[float]
    stds: list[float]
    categorical_names: list[str]
    vocabularies: dict[str, list[str]]
    code_fields: list[str]
    code_vocabularies: dict[str, list[str]]
    current_codes: bool
    ward_counts: dict[str, int]
    acute_wards: list[str]

    @property
    def feature_names(self) -> list[str]:
        return list(self.numeric_names) + list(self.categorical_names) + list(self.code_fields)

    @property
    def ward_stats(self) -> WardStats:
        return WardStats(self.ward_counts, frozenset(self.acute_wards))

    def to_dict(self):
        return {
            "task": self.task,
            "numeric": [
                {"name": n, "mean": m, "std": s} for n, m, s in zip(self.numeric_names, self.means, self.stds)
            ],
            "categorical": {n: self.vocabularies[n] for n in self.categorical_names},
            "categorical_order": list(self.categorical_names),
            "codes": {f: self.code_vocabularies[f] for f in self.code_fields},
            "code_order": list(self.code_fields),
            "current_codes": self.current_codes,
            "ward_counts": self.ward_counts,
            "acute_wards": self.acute_wards,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            task=d["task"],
            numeric_names=[c["name"] for c in d["numeric"]],
            means=[c["mean"] for c in d["numeric"]],
            stds=[c["std"] for c in d["numeric"]],
            categorical_names=list(d["categorical_order"]),
            vocabularies={k: list(v) for k, v in d["categorical"].items()},
            code_fields=list(d["code_order"]),
            code_vocabularies={k: list(v) for k, v in d["codes"].items()},
            current_codes=d["current_codes"],
            ward_counts=dict(d["ward_counts"]),
            acute_wards=list(d["acute_wards"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def none_index(self, name) -> int:
        return self.vocabularies[name].index(MISSING)

    def unk_index(self, name) -> int:
        return self.vocabularies[name].index(UNK)


@dataclass
class FeatureMatrix:
    episode_ids: list[str]
    patient_ids: list[str]
    admission_dates: list
    numeric: np.ndarray
    categorical: np.ndarray
    codes: dict[str, list[np.ndarray]]
    labels: dict[str, np.ndarray]
    schema: FeatureSchema

    def __len__(self):
        return len(self.episode_ids)

    @property
    def task(self):
        return self.schema.task

    @property
    def target(self) -> np.ndarray:
        return self.labels[TASKS[self.schema.task]]

    def take(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureMatrix(
            episode_ids=[self.episode_ids[i] for i in idx],
            patient_ids=[self.patient_ids[i] for i in idx],
            admission_dates=[self.admission_dates[i] for i in idx],
            numeric=self.numeric[idx],
            categorical=self.categorical[idx],
            codes={f: [v[i] for i in idx] for f, v in self.codes.items()},
            labels={k: v[idx] for k, v in self.labels.items()},
            schema=self.schema,
        )

    def code_bag(self, field_name) -> np.ndarray:
        """Dense (rows, vocab) matrix of mean-pooling weights, 1/|set| per present code."""
        vocab = self.schema.code_vocabularies[field_name]
        bag = np.zeros((len(self), len(vocab)))
        for i, codes in enumerate(self.codes[field_name]):
            if len(codes):
                bag[i, codes] = 1.0 / len(codes)
        return bag

    def to_csv(self) -> str:
        s = self.schema
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode_id", "patient_id", *s.numeric_names, *s.categorical_names, *s.code_fields, *LABELS])
        for i, eid in enumerate(self.episode_ids):
            cats = [s.vocabularies[n][j] for n, j in zip(s.categorical_names, self.categorical[i])]
            codes = ["|".join(s.code_vocabularies[f][j] for j in self.codes[f][i]) for f in s.code_fields]
            labels = [repr(float(self.labels[k][i])) for k in LABELS]
            w.writerow([eid, self.patient_ids[i], *map(repr, self.numeric[i].tolist()), *cats, *codes, *labels])
        return buf.getvalue()


class FeatureAssembler(TransformerMixin, BaseEstimator):
    """Fit vocabularies, ward statistics and z-score parameters on training rows.

    ``transform`` maps raw :class:`EpisodeRow` objects to a
    :class:`FeatureMatrix` laid out by the frozen schema. Unseen categories
    map to ``"UNK"``; unseen codes are dropped.
    """

    def __init__(self, task="readmit30"):
        self.task = task

    def fit(self, rows: Sequence[EpisodeRow], y=None):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not rows:
            raise ValueError("cannot fit a schema on zero rows")
        numeric_names, categorical_names, current = task_columns(self.task)
        stats = WardStats.fit(rows)
        vocabs = {}
        for name in categorical_names:
            seen = sorted({r.categorical[name] for r in rows} - {MISSING, UNK})
            vocabs[name] = [UNK, MISSING, *seen]
        code_vocabs = {}
        for f in CODE_FIELDS:
            source = (r.codes if current else r.history_codes for r in rows)
            code_vocabs[f] = sorted({c for codes in source for c in codes[f]})
        self.schema_ = FeatureSchema(
            task=self.task,
            numeric_names=list(numeric_names),
            means=[0.0] * len(numeric_names),
            stds=[1.0] * len(numeric_names),
            categorical_names=list(categorical_names),
            vocabularies=vocabs,
            code_fields=list(CODE_FIELDS),
            code_vocabularies=code_vocabs,
            current_codes=current,
            ward_counts=dict(stats.admission_counts),
            acute_wards=sorted(stats.acute_wards),
        )
        raw = self._numeric_block(rows, self.schema_)
        self.schema_.means = raw.mean(axis=0).tolist()
        self.schema_.stds = np.maximum(raw.std(axis=0), STD_FLOOR).tolist()
        return self

    @staticmethod
    def _numeric_block(rows, schema):
        stats = schema.ward_stats
        out = np.empty((len(rows), len(schema.numeric_names)))
        for i, r in enumerate(rows):
            values = dict(r.numeric)
            values.update(ward_transition_features(r, stats))
            try:
                out[i] = [values[n] for n in schema.numeric_names]
            except KeyError as exc:
                raise ValueError(f"row {r.episode_id} lacks schema column {exc.args[0]!r}") from None
        return out

    def transform(self, rows: Sequence[EpisodeRow]) -> FeatureMatrix:
        check_is_fitted(self, "schema_")
        return transform_rows(rows, self.schema_)


def transform_rows(rows: Sequence[EpisodeRow], schema: FeatureSchema) -> FeatureMatrix:
    raw = FeatureAssembler._numeric_block(rows, schema)
    numeric = (raw - np.asarray(schema.means)) / np.asarray(schema.stds)
    if not np.all(np.isfinite(numeric)):
        raise ValueError("non-finite values in numeric block")
    lookup = {n: {v: i for i, v in enumerate(schema.vocabularies[n])} for n in schema.categorical_names}
    categorical = np.empty((len(rows), len(schema.categorical_names)), dtype=np.int64)
    for i, r in enumerate(rows):
        for j, n in enumerate(schema.categorical_names):
            try:
                value = r.categorical[n]
            except KeyError:
                raise ValueError(f"row {r.episode_id} lacks categorical column {n!r}") from None
            categorical[i, j] = lookup[n].get(value, lookup[n][UNK])
    code_lookup = {f: {c: i for i, c in enumerate(schema.code_vocabularies[f])} for f in schema.code_fields}
    codes = {}
    for f in schema.code_fields:
        col = []
        for r in rows:
            source = r.codes if schema.current_codes else r.history_codes
            col.append(np.array(sorted({code_lookup[f][c] for c in source[f] if c in code_lookup[f]}),
                                dtype=np.int64))
        codes[f] = col
    labels = {k: np.array([r.labels.get(k, math.nan) for r in rows], dtype=float) for k in LABELS}
    return FeatureMatrix(
        episode_ids=[r.episode_id for r in rows],
        patient_ids=[r.patient_id for r in rows],
        admission_dates=[r.admission_date for r in rows],
        numeric=numeric,
        categorical=categorical,
        codes=codes,
        labels=labels,
        schema=schema,
    )


def assemble(rows: Sequence[EpisodeRow], task: str, schema: FeatureSchema | None = None):
    """Fit a schema on ``rows`` when none is given, else transform with the frozen one."""
    if schema is None:
        assembler = FeatureAssembler(task=task).fit(rows)
        return assembler.transform(rows), assembler.schema_
    if schema.task != task:
        raise ValueError(f"schema was fitted for task {schema.task!r}, not {task!r}")
    return transform_rows(rows, schema), schema


def write_features(directory, matrix: FeatureMatrix, name="features"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for path, text in ((directory / f"{name}.csv", matrix.to_csv()),
                       (directory / "schema.json", matrix.schema.to_json() + "\n")):
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        tmp.replace(path)
