"""Serializable run configuration and the per-run output directory it keys."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .features import TASKS
from .models.backbones import BACKBONES
from .synthgen import GeneratorConfig

STAGES = ("generate", "cohort", "network", "featurize", "train", "explain", "report")


def default_model_params():
    return {
        "d": 32,
        "dropout": 0.3,
        "lr": 1e-3,
        "weight_decay": 1e-3,
        "batch_size": 256,
        "max_epochs": 60,
        "patience": 10,
        "focal_gamma": 2.0,
        "focal_alpha": 0.25,
        "threshold": 0.5,
    }


@dataclass
class RunConfig:
    input: str | None = None
    generator: dict = field(default_factory=lambda: GeneratorConfig().to_dict())
    tasks: list = field(default_factory=lambda: list(TASKS))
    models: list = field(default_factory=lambda: list(BACKBONES))
    seeds: list = field(default_factory=lambda: [0])
    folds: int = 5
    train_fraction: float = 0.9
    damping: float = 0.85
    model_params: dict = field(default_factory=default_model_params)
    ig_steps: int = 256
    ig_samples: int = 500
    joint_code_ranking: bool = False
    tsne_perplexity: float = 30.0
    tsne_iters: int = 1000
    tsne_max_per_class: int = 400
    emit_graphs: bool = False

    def validate(self):
        for t in self.tasks:
            if t not in TASKS:
                raise ValueError(f"unknown task {t!r}; choose from {sorted(TASKS)}")
        for m in self.models:
            if m not in BACKBONES:
                raise ValueError(f"unknown model {m!r}; choose from {BACKBONES}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.folds < 2:
            raise ValueError(f"need at least 2 folds, got {self.folds}")
        if self.ig_steps < 16:
            raise ValueError(f"ig_steps must be >= 16, got {self.ig_steps}")
        GeneratorConfig.from_dict(self.generator).validate()
        return self

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        cfg = cls(**d)
        params = default_model_params()
        params.update(cfg.model_params)
        cfg.model_params = params
        gen = GeneratorConfig().to_dict()
        gen.update(cfg.generator)
        cfg.generator = gen
        return cfg

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]

    def run_dir(self, out) -> Path:
        return Path(out) / f"run-{self.digest()}"


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
