"""Synthetic EMR corpora with a planted, recoverable CPE-acquisition mechanism.

CPE positivity for screened episodes follows a logistic model over the
``planted_effects`` of :class:`GeneratorConfig`. Keys are either a numeric
episode attribute (``"age"``, per unit above ``AGE_CENTER``), a category
indicator (``"area_of_residence=R03"``) or ``"exposed"`` for sharing a
ward-day with a patient already known positive. The intercept is calibrated
so the expected positive rate over all episodes equals ``cpe_prevalence``.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import exposure_flags
from .records import BedDayRecord, Episode, MISSING, write_beddays, write_episodes

logger = logging.getLogger(__name__)

AGE_CENTER = 60.0
CPE_CODE = "Z16.1"
# ICD-10 chapter letters used for the synthetic vocabulary (U is reserved)
CHAPTER_LETTERS = "ABCDEFGHIJKLMNOPQRSTZ"
ACUTE_WARD_COUNT = 3
# share of emergency admissions routed to the acute wards
ACUTE_ROUTING_PROB = 0.4


@dataclass
class GeneratorConfig:
    n_patients: int = 6000
    date_range: tuple[str, str] = ("2018-01-01", "2022-02-28")
    n_wards: int = 24
    n_areas: int = 12
    n_diag_codes: int = 400
    n_proc_codes: int = 150
    cpe_prevalence: float = 0.002
    screen_rate: float = 0.5
    transfer_prob: float = 0.08
    minor_fraction: float = 0.03
    missing_rate: float = 0.02
    base_readmit_prob: float = 0.15
    planted_effects: dict = field(default_factory=lambda: {
        "area_of_residence=R03": 2.5,
        "admission_ward=W02": 2.5,
        "age": 0.05,
        "exposed": 2.0,
    })
    readmission_effects: dict = field(default_factory=lambda: {"diagnosis_group=K": 1.5})
    seed: int = 0

    def validate(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be positive")
        if self.n_wards < 1:
            raise ValueError("need at least one ward")
        if self.n_areas < 1 or self.n_diag_codes < 1 or self.n_proc_codes < 1:
            raise ValueError("vocabulary sizes must be positive")
        if not 0.0 < self.cpe_prevalence < 1.0:
            raise ValueError("cpe_prevalence must lie in (0, 1)")
        if not 0.0 < self.screen_rate <= 1.0:
            raise ValueError("screen_rate must lie in (0, 1]")
        if self.cpe_prevalence >= self.screen_rate:
            raise ValueError("cpe_prevalence must be below screen_rate")
        start, end = (dt.date.fromisoformat(d) for d in self.date_range)
        if (end - start).days < 60:
            raise ValueError("date_range must span at least 60 days")
        for key in self.planted_effects:
            _effect_target(key)
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["date_range"] = list(self.date_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "date_range" in d:
            d["date_range"] = tuple(d["date_range"])
        return cls(**d)


def _effect_target(key):
    if key in ("age", "exposed", "emergency_admission", "los_days"):
        return key, None
    if "=" in key:
        name, value = key.split("=", 1)
        if name in ("area_of_residence", "admission_ward", "sex"):
            return name, value
    raise ValueError(f"unsupported planted effect {key!r}")


def effect_feature_name(key):
    """Feature column that carries a planted effect (``"area_of_residence=R03"`` -> ``"area_of_residence"``)."""
    return _effect_target(key)[0]


def ward_ids(n):
    return [f"W{i:02d}" for i in range(n)]


def area_ids(n):
    return [f"R{i:02d}" for i in range(n)]


def _zipf_probs(n, s, rng):
    p = 1.0 / np.arange(1, n + 1) ** s
    p = p[rng.permutation(n)]
    return p / p.sum()


def _diag_vocab(n, rng):
    codes = set()
    out = []
    while len(out) < n:
        letter = CHAPTER_LETTERS[len(out) % len(CHAPTER_LETTERS)]
        code = f"{letter}{rng.integers(0, 100):02d}.{rng.integers(0, 10)}"
        if code not in codes and not code.startswith("Z16"):
            codes.add(code)
            out.append(code)
    return out


def _proc_vocab(n, rng):
    bases = rng.choice(np.arange(10000, 99999), size=n, replace=False)
    return [f"{b:05d}-{rng.integers(0, 100):02d}" for b in bases]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class _Corpus:
    episodes: list
    beddays: list
    # per-episode arrays aligned with ``episodes``
    patient_idx: np.ndarray
    admit_day: np.ndarray
    screened: np.ndarray
    # bed-day arrays
    bd_patient: np.ndarray
    bd_ward: np.ndarray
    bd_day: np.ndarray
    bd_episode: np.ndarray


def _simulate(cfg: GeneratorConfig, rng) -> _Corpus:
    start, end = (dt.date.fromisoformat(d) for d in cfg.date_range)
    horizon = (end - start).days
    wards = ward_ids(cfg.n_wards)
    areas = area_ids(cfg.n_areas)
    dx_vocab = _diag_vocab(cfg.n_diag_codes, rng)
    px_vocab = _proc_vocab(cfg.n_proc_codes, rng)
    dx_chapter = np.array([c[0] for c in dx_vocab])
    chapters = sorted(set(dx_chapter))
    dx_p = _zipf_probs(len(dx_vocab), 0.8, rng)
    px_p = _zipf_probs(len(px_vocab), 0.8, rng)
    area_p = _zipf_probs(cfg.n_areas, 0.6, rng)
    ward_p = _zipf_probs(cfg.n_wards, 0.5, rng)
    n_acute = min(ACUTE_WARD_COUNT, cfg.n_wards)
    acute_p = np.zeros(cfg.n_wards)
    acute_p[:n_acute] = 1.0 / n_acute
    # sparse preferred transfer targets per ward
    transfer = rng.dirichlet(np.full(cfg.n_wards, 0.3), size=cfg.n_wards) + 1e-3
    np.fill_diagonal(transfer, 0.0)
    if cfg.n_wards > 1:
        transfer /= transfer.sum(axis=1, keepdims=True)
    readmit_logit0 = math.log(cfg.base_readmit_prob / (1 - cfg.base_readmit_prob))
    readmit_fx = {}
    for key, w in cfg.readmission_effects.items():
        name, value = key.split("=", 1)
        if name != "diagnosis_group":
            raise ValueError(f"unsupported readmission effect {key!r}")
        readmit_fx[value] = float(w)

    episodes, beddays = [], []
    ep_patient, ep_day, ep_screen = [], [], []
    bd_p, bd_w, bd_d, bd_e = [], [], [], []
    for pi in range(cfg.n_patients):
        pid = f"P{pi + 1:06d}"
        minor = rng.random() < cfg.minor_fraction
        age0 = int(rng.integers(5, 18)) if minor else int(np.clip(rng.normal(62, 17), 18, 98))
        sex = MISSING if rng.random() < cfg.missing_rate else ("F" if rng.random() < 0.5 else "M")
        area = MISSING if rng.random() < cfg.missing_rate else areas[rng.choice(cfg.n_areas, p=area_p)]
        favourite = rng.choice(chapters, size=2, replace=False)
        fav_mask = np.isin(dx_chapter, favourite)
        fav_p = dx_p * np.where(fav_mask, 6.0, 1.0)
        fav_p /= fav_p.sum()
        day = int(rng.integers(0, max(horizon - 30, 1)))
        first_day = day
        while day < horizon:
            emergency = rng.random() < 0.6
            los = 1 + int(min(rng.lognormal(1.3, 0.7), 59))
            age = age0 + int((day - first_day) / 365.25)
            if emergency and rng.random() < ACUTE_ROUTING_PROB:
                w = int(rng.choice(cfg.n_wards, p=acute_p))
            else:
                w = int(rng.choice(cfg.n_wards, p=ward_p))
            ward_path = [(day, w)]
            for d in range(day + 1, day + los + 1):
                if cfg.n_wards > 1 and rng.random() < cfg.transfer_prob:
                    nw = int(rng.choice(cfg.n_wards, p=transfer[w]))
                    ward_path.append((d, w))  # occupies both wards on the transfer day
                    w = nw
                ward_path.append((d, w))
            n_dx = 1 + int(rng.poisson(2.5))
            dx = list(dict.fromkeys(rng.choice(dx_vocab, size=n_dx, p=fav_p)))
            n_px = int(rng.poisson(1.2))
            px = list(dict.fromkeys(rng.choice(px_vocab, size=n_px, p=px_p))) if n_px else []
            p_die = _sigmoid(-4.8 + 0.05 * (age - AGE_CENTER) + 0.4 * emergency + 0.02 * los)
            died = rng.random() < p_die
            screened = rng.random() < cfg.screen_rate
            eid = f"E{len(episodes) + 1:07d}"
            adm = start + dt.timedelta(days=day)
            dis = adm + dt.timedelta(days=los)
            ei = len(episodes)
            episodes.append(Episode(
                episode_id=eid, patient_id=pid, admission_date=adm, discharge_date=dis, age=age,
                sex=sex, area_of_residence=area,
                admission_ward=wards[ward_path[0][1]], discharge_ward=wards[ward_path[-1][1]],
                diagnosis_codes=tuple(dx), procedure_codes=tuple(px),
                cpe_screened=screened, cpe_result="negative" if screened else "not_tested",
                discharge_status="died" if died else "alive", emergency_admission=emergency,
            ))
            ep_patient.append(pi)
            ep_day.append(day)
            ep_screen.append(screened)
            for d, wi in dict.fromkeys(ward_path):
                bd_p.append(pi)
                bd_w.append(wi)
                bd_d.append(d)
                bd_e.append(ei)
            if died:
                break
            groups = {c[0] for c in dx}
            logit = readmit_logit0 + sum(readmit_fx.get(g, 0.0) for g in groups)
            if rng.random() < _sigmoid(logit):
                gap = int(rng.integers(1, 31))
            else:
                gap = 31 + int(rng.exponential(200))
            day = day + los + gap
    corpus = _Corpus(
        episodes=episodes, beddays=beddays,
        patient_idx=np.array(ep_patient, dtype=np.int64),
        admit_day=np.array(ep_day, dtype=np.int64),
        screened=np.array(ep_screen, dtype=bool),
        bd_patient=np.array(bd_p, dtype=np.int64),
        bd_ward=np.array(bd_w, dtype=np.int64),
        bd_day=np.array(bd_d, dtype=np.int64),
        bd_episode=np.array(bd_e, dtype=np.int64),
    )
    for p, w, d, e in zip(bd_p, bd_w, bd_d, bd_e):
        ep = episodes[e]
        beddays.append(BedDayRecord(ep.patient_id, ep.episode_id, wards[w], start + dt.timedelta(days=d)))
    return corpus


def _base_logits(cfg: GeneratorConfig, episodes) -> np.ndarray:
    eta = np.zeros(len(episodes))
    for key, w in cfg.planted_effects.items():
        name, value = _effect_target(key)
        if name == "exposed" or w == 0:
            continue
        if value is None:
            if name == "age":
                x = np.array([e.age - AGE_CENTER for e in episodes], dtype=float)
            elif name == "los_days":
                x = np.array([e.los_days for e in episodes], dtype=float)
            else:
                x = np.array([getattr(e, name) for e in episodes], dtype=float)
        else:
            x = np.array([getattr(e, name) == value for e in episodes], dtype=float)
        eta += w * x
    return eta


def inject_exposure_signal(
    corpus: _Corpus,
    positives: np.ndarray,
    effect: float,
    base_logit: np.ndarray,
    uniforms: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One exposure round: raise exposed episodes' log-odds by ``effect``.

    ``positives`` marks currently positive episodes. Returns the updated
    positive labels and the per-episode exposure flags they were based on.
    """
    n_pat = int(corpus.patient_idx.max(initial=-1)) + 1
    sentinel = np.iinfo(np.int64).max // 4
    flag_day = np.full(n_pat, sentinel, dtype=np.int64)
    if positives.any():
        np.minimum.at(flag_day, corpus.patient_idx[positives], corpus.admit_day[positives])
    row_exposed = exposure_flags(corpus.bd_patient, corpus.bd_ward, corpus.bd_day, flag_day)
    exposed = np.zeros(len(positives), dtype=bool)
    exposed[corpus.bd_episode[row_exposed]] = True
    logit = base_logit + effect * exposed
    labels = corpus.screened & (uniforms < _sigmoid(logit))
    return labels, exposed


def _fixed_point(corpus, base, effect, uniforms, max_rounds=100):
    labels = corpus.screened & (uniforms < _sigmoid(base))
    exposed = np.zeros_like(labels)
    if effect == 0:
        return labels, exposed
    for _ in range(max_rounds):
        new, exposed = inject_exposure_signal(corpus, labels, effect, base, uniforms)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, exposed


def _calibrate_intercept(cfg, corpus, eta, uniforms):
    effect = float(cfg.planted_effects.get("exposed", 0.0))
    target = cfg.cpe_prevalence
    n = len(eta)

    def expected_rate(b):
        labels, exposed = _fixed_point(corpus, b + eta, effect, uniforms)
        p = _sigmoid(b + eta + effect * exposed)
        return float((p * corpus.screened).sum() / n)

    if not np.any(eta) and effect == 0:
        return math.log(target / cfg.screen_rate) - math.log1p(-target / cfg.screen_rate)
    lo, hi = -30.0, 10.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if expected_rate(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6:
            break
    return 0.5 * (lo + hi)


def generate_records(cfg: GeneratorConfig):
    """Simulate a corpus in memory: ``(episodes, beddays, ground_truth)``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    corpus = _simulate(cfg, rng)
    if not corpus.episodes:
        raise ValueError("configuration produced no episodes")
    uniforms = rng.random(len(corpus.episodes))
    eta = _base_logits(cfg, corpus.episodes)
    intercept = _calibrate_intercept(cfg, corpus, eta, uniforms)
    effect = float(cfg.planted_effects.get("exposed", 0.0))
    labels, exposed = _fixed_point(corpus, intercept + eta, effect, uniforms)
    code_draw = rng.random(len(corpus.episodes))
    episodes = []
    for i, e in enumerate(corpus.episodes):
        if labels[i]:
            dx = e.diagnosis_codes + ((CPE_CODE,) if code_draw[i] < 0.5 else ())
            e = dataclasses.replace(e, cpe_result="positive", diagnosis_codes=dx)
        episodes.append(e)
    truth = {
        "cpe": {
            "intercept": intercept,
            "effects": dict(cfg.planted_effects),
            "feature_map": {k: effect_feature_name(k) for k in cfg.planted_effects},
            "age_center": AGE_CENTER,
            "n_positive": int(labels.sum()),
            "n_exposed": int(exposed.sum()),
        },
        "readmission": {"effects": dict(cfg.readmission_effects)},
        "acute_wards": ward_ids(cfg.n_wards)[:ACUTE_WARD_COUNT],
        "cpe_codes": [CPE_CODE],
        "n_episodes": len(episodes),
        "n_beddays": len(corpus.beddays),
        "config": cfg.to_dict(),
    }
    return episodes, corpus.beddays, truth


def generate(cfg: GeneratorConfig, out_dir) -> dict[str, Path]:
    """Write ``episodes.csv``, ``beddays.csv`` and ``ground_truth.json`` to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    episodes, beddays, truth = generate_records(cfg)
    paths = {
        "episodes": out_dir / "episodes.csv",
        "beddays": out_dir / "beddays.csv",
        "ground_truth": out_dir / "ground_truth.json",
    }
    write_episodes(paths["episodes"], episodes)
    write_beddays(paths["beddays"], beddays)
    tmp = paths["ground_truth"].with_suffix(".json.tmp")
    tmp.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    tmp.replace(paths["ground_truth"])
    logger.info("generated %d episodes, %d bed-days, %d CPE positive",
                len(episodes), len(beddays), truth["cpe"]["n_positive"])
    return paths


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
