"""Scikit-learn style wrapper around :class:`RiskNetwork`."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..autodiff import load_tensors, save_tensors
from ..features import REGRESSION_TASKS, TASKS, FeatureMatrix, FeatureSchema
from ..training.losses import FocalLossConfig
from ..training.loop import TrainConfig, fit_network, los_days, raw_outputs
from ..training.metrics import auroc, rmse
from .backbones import BACKBONES, BackboneConfig, RiskNetwork
from .encoder import EncoderConfig, ModelInputs


def check_feature_matrix(X, schema: FeatureSchema | None = None) -> FeatureMatrix:
    """Reject anything that is not a FeatureMatrix laid out by ``schema``."""
    if not isinstance(X, FeatureMatrix):
        raise TypeError(f"expected a FeatureMatrix, got {type(X).__name__}")
    if len(X) == 0:
        raise ValueError("FeatureMatrix has no rows")
    if X.numeric.shape != (len(X), len(X.schema.numeric_names)):
        raise ValueError(f"numeric block shape {X.numeric.shape} does not match its schema")
    if not np.all(np.isfinite(X.numeric)):
        raise ValueError("numeric block contains non-finite values")
    if schema is not None and X.schema.digest() != schema.digest():
        raise ValueError("FeatureMatrix was built with a different schema than the model was fitted on")
    return X


def check_task(task):
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    return task


def check_backbone(name):
    if name not in BACKBONES:
        raise ValueError(f"unknown model {name!r}; choose from {BACKBONES}")
    return name


class TabularRiskModel(BaseEstimator):
    """Encoder-fusion network with a ResNet, TabTransformer or TabNet backbone.

    ``fit`` takes a :class:`FeatureMatrix` (targets come from its label
    columns unless ``y`` is given) and an optional validation matrix built
    with the same schema for early stopping.
    """

    def __init__(
        self,
        backbone="tabtransformer",
        task="readmit30",
        d=32,
        depth=None,
        heads=4,
        n_steps=3,
        gamma_tabnet=1.3,
        hidden=64,
        dropout=0.3,
        lr=1e-3,
        weight_decay=1e-3,
        batch_size=256,
        max_epochs=60,
        patience=10,
        focal_gamma=2.0,
        focal_alpha=0.25,
        balanced=True,
        threshold=0.5,
        code_vectors=None,
        text_vectors=None,
        seed=0,
    ):
        self.backbone = backbone
        self.task = task
        self.d = d
        self.depth = depth
        self.heads = heads
        self.n_steps = n_steps
        self.gamma_tabnet = gamma_tabnet
        self.hidden = hidden
        self.dropout = dropout
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.focal_gamma = focal_gamma
        self.focal_alpha = focal_alpha
        self.balanced = balanced
        self.threshold = threshold
        self.code_vectors = code_vectors
        self.text_vectors = text_vectors
        self.seed = seed

    @property
    def regression(self):
        return self.task in REGRESSION_TASKS

    def _configs(self):
        enc = EncoderConfig(d=self.d, code_vectors=self.code_vectors, text_vectors=self.text_vectors)
        bb = BackboneConfig(
            kind=check_backbone(self.backbone), depth=self.depth, heads=self.heads, n_steps=self.n_steps,
            gamma=self.gamma_tabnet, hidden=self.hidden, dropout=self.dropout,
        )
        train = TrainConfig(
            lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size, max_epochs=self.max_epochs,
            patience=self.patience, balanced=self.balanced,
            focal=FocalLossConfig(self.focal_gamma, self.focal_alpha), seed=self.seed,
        )
        return enc, bb, train

    def _build(self, schema):
        enc, bb, _ = self._configs()
        self.schema_ = schema
        self.network_ = RiskNetwork(schema, enc, bb, seed=self.seed)
        self.network_.eval()
        return self.network_

    def _targets(self, X, y):
        y = X.target if y is None else np.asarray(y, dtype=np.float64)
        if y.shape != (len(X),):
            raise ValueError(f"expected {len(X)} targets, got shape {y.shape}")
        return y

    def fit(self, X, y=None, X_val=None, y_val=None):
        check_task(self.task)
        X = check_feature_matrix(X)
        if X.schema.task != self.task:
            raise ValueError(f"FeatureMatrix is for task {X.schema.task!r}, estimator is for {self.task!r}")
        y = self._targets(X, y)
        net = self._build(X.schema)
        _, _, train_cfg = self._configs()
        val_inputs = None
        if X_val is not None:
            X_val = check_feature_matrix(X_val, X.schema)
            y_val = self._targets(X_val, y_val)
            val_inputs = ModelInputs.from_matrix(X_val)
        result = fit_network(
            net, ModelInputs.from_matrix(X), y, train_cfg, val_inputs, y_val, regression=self.regression
        )
        net.eval()
        self.history_ = result["history"]
        self.best_epoch_ = result["best_epoch"]
        self.n_features_in_ = len(X.schema.feature_names)
        self.feature_names_in_ = np.array(X.schema.feature_names, dtype=object)
        return self

    def _inputs(self, X):
        check_is_fitted(self, "network_")
        return ModelInputs.from_matrix(check_feature_matrix(X, self.schema_))

    def decision_function(self, X):
        """Raw network output: a logit, or the pre-softplus value for stay length."""
        inputs = self._inputs(X)
        return raw_outputs(self.network_, inputs)

    def predict_proba(self, X):
        if self.regression:
            raise AttributeError("predict_proba is not available for the regression task")
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.column_stack([1.0 - p, p])

    def predict_scores(self, X):
        """Positive-class probability, or predicted days for stay length."""
        raw = self.decision_function(X)
        return los_days(raw) if self.regression else 1.0 / (1.0 + np.exp(-raw))

    def predict(self, X):
        scores = self.predict_scores(X)
        return scores if self.regression else (scores >= self.threshold).astype(np.int64)

    def transform(self, X):
        """Learned episode representation (the input to the output head)."""
        inputs = self._inputs(X)
        net = self.network_
        net.eval()
        chunks = []
        for start in range(0, len(inputs), 2048):
            idx = np.arange(start, min(start + 2048, len(inputs)))
            sub = ModelInputs(inputs.numeric[idx], inputs.categorical[idx], {f: b[idx] for f, b in inputs.bags.items()})
            chunks.append(net.representation(sub))
        return np.concatenate(chunks, axis=0)

    def score(self, X, y=None):
        y = self._targets(X, y)
        scores = self.predict_scores(X)
        return -rmse(scores, y) if self.regression else auroc(scores, y)

    # -- persistence -------------------------------------------------------

    def save(self, directory):
        check_is_fitted(self, "network_")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_tensors(directory / "model.csv", self.network_.state_dict())
        config = {"params": self.get_params(), "best_epoch": self.best_epoch_, "history": self.history_}
        for name, text in (("config.json", json.dumps(config, sort_keys=True, indent=1)),
                           ("schema.json", self.schema_.to_json())):
            tmp = directory / f"{name}.tmp"
            tmp.write_text(text + "\n")
            os.replace(tmp, directory / name)
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        for name in ("model.csv", "config.json", "schema.json"):
            if not (directory / name).exists():
                raise FileNotFoundError(directory / name)
        config = json.loads((directory / "config.json").read_text())
        model = cls(**config["params"])
        schema = FeatureSchema.from_json((directory / "schema.json").read_text())
        net = model._build(schema)
        net.load_state_dict(load_tensors(directory / "model.csv"))
        model.history_ = config.get("history", [])
        model.best_epoch_ = config.get("best_epoch", -1)
        model.n_features_in_ = len(schema.feature_names)
        model.feature_names_in_ = np.array(schema.feature_names, dtype=object)
        return model
