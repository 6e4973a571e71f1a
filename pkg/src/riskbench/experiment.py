"""Cross-validated training, test scoring and attribution runs for one task and model."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .explain import AttributionRun, IGConfig, integrated_gradients, mean_abs_attribution
from .features import REGRESSION_TASKS, TASKS, EpisodeRow, FeatureAssembler, task_rows, transform_rows
from .models import TabularRiskModel
from .training import make_folds, metric_report
from .training.metrics import METRIC_COLUMNS


@dataclass
class FoldResult:
    fold: int
    model: TabularRiskModel
    val_ids: list[str]
    val_scores: np.ndarray
    val_metrics: dict
    test_ids: list[str]
    test_scores: np.ndarray
    test_metrics: dict


@dataclass
class CVResult:
    task: str
    model_name: str
    folds: list[FoldResult] = field(default_factory=list)

    def summary(self, split="test"):
        """Mean and population std of each metric across folds."""
        rows = [getattr(f, f"{split}_metrics") for f in self.folds]
        out = {}
        for k in METRIC_COLUMNS:
            vals = np.array([r[k] for r in rows], dtype=float)
            ok = vals[np.isfinite(vals)]
            out[k] = (float(ok.mean()), float(ok.std())) if ok.size else (math.nan, math.nan)
        return out


def _fit_fold(args):
    fold, task, params, train_rows, val_rows, test_rows, threshold = args
    assembler = FeatureAssembler(task).fit(train_rows)
    X_tr, X_val, X_te = (assembler.transform(r) for r in (train_rows, val_rows, test_rows))
    model = TabularRiskModel(task=task, **params).fit(X_tr, X_val=X_val)
    regression = task in REGRESSION_TASKS
    val_scores = model.predict_scores(X_val)
    test_scores = model.predict_scores(X_te)

    def report(scores, X):
        y = X.target
        if not regression and (y.min() == y.max()):
            return dict.fromkeys(METRIC_COLUMNS, math.nan)
        return metric_report(scores, y, regression=regression, threshold=threshold)

    return FoldResult(
        fold=fold,
        model=model,
        val_ids=list(X_val.episode_ids),
        val_scores=val_scores,
        val_metrics=report(val_scores, X_val),
        test_ids=list(X_te.episode_ids),
        test_scores=test_scores,
        test_metrics=report(test_scores, X_te),
    )


def cross_validate(
    train_rows: list[EpisodeRow],
    test_rows: list[EpisodeRow],
    task: str,
    model_params: dict,
    k=5,
    seed=0,
    folds=None,
    n_jobs=1,
) -> CVResult:
    """Patient-grouped k-fold training with fold-local schemas; every fold model also scores the test set.

    ``folds`` restricts which folds are trained (all by default).
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    train_rows = task_rows(train_rows, task)
    test_rows = task_rows(test_rows, task)
    label = TASKS[task]
    plan = make_folds(
        [r.episode_id for r in train_rows], [r.patient_id for r in train_rows],
        [r.labels[label] if task != "los" else 0.0 for r in train_rows], k=k, seed=seed,
    )
    threshold = model_params.get("threshold", 0.5)
    jobs = []
    for fold in range(k) if folds is None else folds:
        val = set(plan.validation_ids(fold))
        jobs.append((
            fold, task, dict(model_params),
            [r for r in train_rows if r.episode_id not in val],
            [r for r in train_rows if r.episode_id in val],
            test_rows, threshold,
        ))
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_fit_fold, jobs))
    else:
        results = [_fit_fold(j) for j in jobs]
    return CVResult(task, model_params.get("backbone", "tabtransformer"), results)


def ensemble_test_scores(result: CVResult) -> np.ndarray:
    return np.mean([f.test_scores for f in result.folds], axis=0)


def sample_rows(n, size, seed):
    if size is None or size >= n:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=size, replace=False))


def explain_folds(result: CVResult, test_rows, steps=256, max_samples=500, seed=0):
    """One IG run per fold model on a fixed sample of test rows.

    Returns ``(runs, ig_results)`` with one :class:`AttributionRun` per fold.
    """
    test_rows = task_rows(test_rows, result.task)
    idx = sample_rows(len(test_rows), max_samples, seed)
    sample = [test_rows[i] for i in idx]
    runs, igs = [], []
    for f in result.folds:
        X = transform_rows(sample, f.model.schema_)
        ig = integrated_gradients(f.model, X, IGConfig(steps=steps))
        runs.append(AttributionRun(result.task, result.model_name, str(f.fold), ig.feature_names,
                                   mean_abs_attribution(ig.attributions)))
        igs.append(ig)
    return runs, igs

