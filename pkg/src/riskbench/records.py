"""Canonical EMR data model: episodes, bed-day rows, labels and the study cohort."""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

MISSING = "None"
READMISSION_WINDOW_DAYS = 30

EPISODE_COLUMNS = (
    "episode_id",
    "patient_id",
    "admission_date",
    "discharge_date",
    "age",
    "sex",
    "area_of_residence",
    "admission_ward",
    "discharge_ward",
    "diagnosis_codes",
    "procedure_codes",
    "cpe_screened",
    "cpe_result",
    "discharge_status",
    "emergency_admission",
)
BEDDAY_COLUMNS = ("patient_id", "episode_id", "ward_id", "date")

CPE_RESULTS = ("positive", "negative", "not_tested")
DISCHARGE_STATUSES = ("alive", "died")


class ParseError(ValueError):
    """A row could not be read; carries the file line and field name."""

    def __init__(self, message, line=None, field_name=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field {field_name!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field_name = field_name


class ValidationError(ValueError):
    """Records parsed but violate a data-model invariant."""


@dataclass(frozen=True)
class BedDayRecord:
    patient_id: str
    episode_id: str
    ward_id: str
    date: dt.date


@dataclass(frozen=True)
class Episode:
    episode_id: str
    patient_id: str
    admission_date: dt.date
    discharge_date: dt.date
    age: int
    sex: str = MISSING
    area_of_residence: str = MISSING
    admission_ward: str = MISSING
    discharge_ward: str = MISSING
    diagnosis_codes: tuple[str, ...] = ()
    procedure_codes: tuple[str, ...] = ()
    cpe_screened: bool = False
    cpe_result: str = "not_tested"
    discharge_status: str = "alive"
    emergency_admission: bool = False

    @property
    def los_days(self) -> int:
        return (self.discharge_date - self.admission_date).days

    def validate(self):
        if self.discharge_date < self.admission_date:
            raise ValidationError(
                f"episode {self.episode_id}: discharge {self.discharge_date} "
                f"before admission {self.admission_date}"
            )
        if self.age < 0:
            raise ValidationError(f"episode {self.episode_id}: negative age {self.age}")
        if self.cpe_result not in CPE_RESULTS:
            raise ValidationError(f"episode {self.episode_id}: bad cpe_result {self.cpe_result!r}")
        if (self.cpe_result == "not_tested") == self.cpe_screened:
            raise ValidationError(
                f"episode {self.episode_id}: cpe_result={self.cpe_result} "
                f"inconsistent with cpe_screened={self.cpe_screened}"
            )
        if self.discharge_status not in DISCHARGE_STATUSES:
            raise ValidationError(
                f"episode {self.episode_id}: bad discharge_status {self.discharge_status!r}"
            )


@dataclass(frozen=True)
class LabeledEpisode:
    episode: Episode
    los_days: int
    readmit_30d: bool
    mortality: bool
    next_los: int | None
    cpe_positive_ever: bool

    @property
    def episode_id(self):
        return self.episode.episode_id

    @property
    def patient_id(self):
        return self.episode.patient_id

    @property
    def admission_date(self):
        return self.episode.admission_date


@dataclass(frozen=True)
class Cohort:
    episodes: tuple[LabeledEpisode, ...]
    train_ids: frozenset[str]
    test_ids: frozenset[str]
    split_date: dt.date

    def train(self) -> list[LabeledEpisode]:
        return [e for e in self.episodes if e.episode_id in self.train_ids]

    def test(self) -> list[LabeledEpisode]:
        return [e for e in self.episodes if e.episode_id in self.test_ids]


# ---------------------------------------------------------------------------
# code generalization


def generalize_code(code: str, kind: str) -> str:
    """Truncate a diagnosis code to 3 characters or a procedure code to 5.

    Dots and separators are removed first, so ``"A41.9"`` becomes ``"A41"``
    and ``"12345-00"`` becomes ``"12345"``. Shorter codes pass through.
    """
    if kind == "diagnosis":
        return code.replace(".", "")[:3]
    if kind == "procedure":
        stripped = "".join(ch for ch in code if ch.isalnum())
        return stripped[:5]
    raise ValueError(f"unknown code kind {kind!r}")


# ---------------------------------------------------------------------------
# parsing


def _parse_date(value, line, name):
    try:
        return dt.date.fromisoformat(value)
    except ValueError:
        raise ParseError(f"not an ISO date: {value!r}", line, name) from None


def _parse_bool(value, line, name):
    if value in ("0", "1"):
        return value == "1"
    raise ParseError(f"expected 0/1, got {value!r}", line, name)


def _parse_codes(value):
    if not value or value == MISSING:
        return ()
    return tuple(c for c in value.split("|") if c)


def _category(value):
    return value if value else MISSING


def _read_rows(path, required):
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        return []
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(f"missing columns {missing} in {path.name}", 1)
    rows = list(reader)
    # columns outside the schema are kept only if they carry data
    extra = [c for c in header if c not in required]
    empty = [c for c in extra if all(not (r.get(c) or "").strip() for r in rows)]
    if empty:
        logger.info("dropping empty columns %s from %s", empty, path.name)
    out = []
    for i, row in enumerate(rows, start=2):
        if None in row:
            raise ParseError("too many fields", i)
        for c in required:
            if row[c] is None:
                raise ParseError("too few fields", i, c)
        out.append((i, {c: row[c].strip() for c in required}))
    return out


def _episode_from_row(line, row) -> Episode:
    for name in ("episode_id", "patient_id"):
        if not row[name]:
            raise ParseError("empty identifier", line, name)
    try:
        age = int(row["age"])
    except ValueError:
        raise ParseError(f"not an integer: {row['age']!r}", line, "age") from None
    screened = _parse_bool(row["cpe_screened"], line, "cpe_screened")
    result = row["cpe_result"] or ("not_tested" if not screened else "")
    if result not in CPE_RESULTS:
        raise ParseError(f"unknown cpe_result {result!r}", line, "cpe_result")
    status = row["discharge_status"]
    if status not in DISCHARGE_STATUSES:
        raise ParseError(f"unknown discharge_status {status!r}", line, "discharge_status")
    return Episode(
        episode_id=row["episode_id"],
        patient_id=row["patient_id"],
        admission_date=_parse_date(row["admission_date"], line, "admission_date"),
        discharge_date=_parse_date(row["discharge_date"], line, "discharge_date"),
        age=age,
        sex=_category(row["sex"]),
        area_of_residence=_category(row["area_of_residence"]),
        admission_ward=_category(row["admission_ward"]),
        discharge_ward=_category(row["discharge_ward"]),
        diagnosis_codes=_parse_codes(row["diagnosis_codes"]),
        procedure_codes=_parse_codes(row["procedure_codes"]),
        cpe_screened=screened,
        cpe_result=result,
        discharge_status=status,
        emergency_admission=_parse_bool(row["emergency_admission"], line, "emergency_admission"),
    )


def parse_episodes(path) -> list[Episode]:
    seen: dict[str, Episode] = {}
    for line, row in _read_rows(path, EPISODE_COLUMNS):
        ep = _episode_from_row(line, row)
        try:
            ep.validate()
        except ValidationError as exc:
            raise ValidationError(f"line {line}: {exc}") from None
        prev = seen.get(ep.episode_id)
        if prev is None:
            seen[ep.episode_id] = ep
        elif prev != ep:
            raise ValidationError(f"line {line}: conflicting rows for episode {ep.episode_id}")
    return list(seen.values())


def parse_beddays(path) -> list[BedDayRecord]:
    seen: dict[tuple, BedDayRecord] = {}
    for line, row in _read_rows(path, BEDDAY_COLUMNS):
        for name in BEDDAY_COLUMNS[:3]:
            if not row[name]:
                raise ParseError("empty identifier", line, name)
        rec = BedDayRecord(
            patient_id=row["patient_id"],
            episode_id=row["episode_id"],
            ward_id=row["ward_id"],
            date=_parse_date(row["date"], line, "date"),
        )
        seen.setdefault((rec.patient_id, rec.ward_id, rec.date), rec)
    return list(seen.values())


def check_beddays(episodes: Sequence[Episode], beddays: Sequence[BedDayRecord]):
    """Raise ValidationError if a bed-day falls outside its episode."""
    by_id = {e.episode_id: e for e in episodes}
    for rec in beddays:
        ep = by_id.get(rec.episode_id)
        if ep is None:
            raise ValidationError(f"bed-day references unknown episode {rec.episode_id}")
        if ep.patient_id != rec.patient_id:
            raise ValidationError(
                f"bed-day patient {rec.patient_id} does not own episode {rec.episode_id}"
            )
        if not ep.admission_date <= rec.date <= ep.discharge_date:
            raise ValidationError(
                f"bed-day {rec.date} outside episode {rec.episode_id} "
                f"[{ep.admission_date}, {ep.discharge_date}]"
            )


def parse_records(path) -> tuple[list[Episode], list[BedDayRecord]]:
    """Read ``episodes.csv`` and ``beddays.csv`` from a directory.

    Duplicate rows are collapsed, schema violations raise :class:`ParseError`
    and invariant violations raise :class:`ValidationError`.
    """
    path = Path(path)
    episodes = parse_episodes(path / "episodes.csv")
    bed_path = path / "beddays.csv"
    beddays = parse_beddays(bed_path) if bed_path.exists() else []
    check_beddays(episodes, beddays)
    return episodes, beddays


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_episodes(path, episodes: Iterable[Episode]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPISODE_COLUMNS)
    for e in episodes:
        w.writerow([
            e.episode_id, e.patient_id, e.admission_date.isoformat(), e.discharge_date.isoformat(),
            e.age, e.sex, e.area_of_residence, e.admission_ward, e.discharge_ward,
            "|".join(e.diagnosis_codes), "|".join(e.procedure_codes),
            int(e.cpe_screened), e.cpe_result, e.discharge_status, int(e.emergency_admission),
        ])
    _atomic_write(path, buf.getvalue())


def write_beddays(path, beddays: Iterable[BedDayRecord]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BEDDAY_COLUMNS)
    for r in beddays:
        w.writerow([r.patient_id, r.episode_id, r.ward_id, r.date.isoformat()])
    _atomic_write(path, buf.getvalue())


# ---------------------------------------------------------------------------
# labels, filters, split


def group_by_patient(episodes: Iterable) -> dict[str, list]:
    """Episodes (or labeled episodes) per patient in admission order."""
    groups: dict[str, list] = {}
    for e in episodes:
        groups.setdefault(e.patient_id, []).append(e)
    for eps in groups.values():
        eps.sort(key=lambda e: (e.admission_date, e.episode_id))
    return groups


def derive_labels(episodes: Sequence[Episode]) -> list[LabeledEpisode]:
    out = []
    for pid, eps in group_by_patient(episodes).items():
        ever_positive = False
        for i, ep in enumerate(eps):
            nxt = eps[i + 1] if i + 1 < len(eps) else None
            if nxt is not None and nxt.admission_date < ep.discharge_date:
                raise ValidationError(
                    f"patient {pid}: episode {nxt.episode_id} overlaps {ep.episode_id}"
                )
            ever_positive = ever_positive or ep.cpe_result == "positive"
            gap = (nxt.admission_date - ep.discharge_date).days if nxt else None
            out.append(LabeledEpisode(
                episode=ep,
                los_days=ep.los_days,
                readmit_30d=gap is not None and gap <= READMISSION_WINDOW_DAYS,
                mortality=ep.discharge_status == "died",
                next_los=nxt.los_days if nxt else None,
                cpe_positive_ever=ever_positive,
            ))
    out.sort(key=lambda le: (le.admission_date, le.episode_id))
    return out


def apply_filters(
    episodes: Sequence[LabeledEpisode],
    history: Sequence | None = None,
    min_age: int = 18,
    min_los_days: int = 2,
) -> list[LabeledEpisode]:
    """Keep adults with stays of >= 48 hours and at least one earlier admission.

    ``history`` is the unfiltered record set the prior-admission rule is
    checked against; it defaults to ``episodes`` itself.
    """
    history = episodes if history is None else history
    first_admission: dict[str, tuple] = {}
    for e in history:
        key = (e.admission_date, e.episode_id)
        cur = first_admission.get(e.patient_id)
        if cur is None or key < cur:
            first_admission[e.patient_id] = key
    kept = []
    for le in episodes:
        ep = le.episode
        first = first_admission.get(ep.patient_id)
        has_prior = first is not None and first[0] < ep.admission_date
        if ep.age >= min_age and le.los_days >= min_los_days and has_prior:
            kept.append(le)
    return kept


def chronological_split(episodes: Sequence[LabeledEpisode], train_fraction: float = 0.9) -> Cohort:
    """Split at the admission-date percentile; ties on the boundary go to train."""
    n = len(episodes)
    if n < 10:
        raise ValueError(f"need at least 10 episodes to split, got {n}")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    ordered = sorted(episodes, key=lambda le: (le.admission_date, le.episode_id))
    n_train = min(max(int(math.floor(train_fraction * n + 0.5)), 1), n)
    split_date = ordered[n_train - 1].admission_date
    train = [le for le in ordered if le.admission_date <= split_date]
    test = [le for le in ordered if le.admission_date > split_date]
    if not test:
        raise ValueError(f"chronological split at {split_date} leaves the test set empty")
    return Cohort(
        episodes=tuple(ordered),
        train_ids=frozenset(le.episode_id for le in train),
        test_ids=frozenset(le.episode_id for le in test),
        split_date=split_date,
    )


def build_cohort(episodes: Sequence[Episode], train_fraction: float = 0.9) -> Cohort:
    labeled = derive_labels(episodes)
    return chronological_split(apply_filters(labeled), train_fraction)


__all__ = [
    "BedDayRecord", "Episode", "LabeledEpisode", "Cohort", "ParseError", "ValidationError",
    "generalize_code", "parse_records", "parse_episodes", "parse_beddays", "check_beddays",
    "write_episodes", "write_beddays", "derive_labels", "apply_filters",
    "chronological_split", "build_cohort", "group_by_patient", "MISSING",
]
