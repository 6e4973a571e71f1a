"""Mini-batch training with Adam and early stopping on a validation metric."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import Adam, backward
from ..autodiff import tensor as T
from .batches import balanced_batches, shuffled_batches
from .losses import FocalLossConfig, focal_loss_from_logits, mse_loss
from .metrics import auroc, rmse


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 256
    max_epochs: int = 60
    patience: int = 10
    balanced: bool = True
    focal: FocalLossConfig = field(default_factory=FocalLossConfig)
    seed: int = 0

    def to_dict(self):
        out = asdict(self)
        out["betas"] = list(self.betas)
        return out


def _slice_inputs(inputs, idx):
    return type(inputs)(inputs.numeric[idx], inputs.categorical[idx], {f: b[idx] for f, b in inputs.bags.items()})


def raw_outputs(net, inputs, chunk=2048):
    """Eval-mode network outputs (logits or pre-softplus values) for every row."""
    was_training = net.training
    net.eval()
    out = np.empty(len(inputs))
    for start in range(0, len(inputs), chunk):
        idx = np.arange(start, min(start + chunk, len(inputs)))
        out[idx] = net(_slice_inputs(inputs, idx)).data
    net.train(was_training)
    return out


def los_days(raw):
    """Pre-softplus output -> predicted stay in days (the model fits log1p(days))."""
    return np.expm1(np.logaddexp(0.0, raw))


def validation_score(net, inputs, y, regression):
    """Higher is better: AUROC, or negative RMSE in days for regression."""
    raw = raw_outputs(net, inputs)
    if regression:
        return -rmse(los_days(raw), y)
    if np.all(y == y[0]):
        return math.nan
    return auroc(raw, y)


def fit_network(net, train_inputs, y_train, cfg: TrainConfig, val_inputs=None, y_val=None, regression=False):
    """Train ``net`` in place; returns the per-epoch history.

    With validation data the best epoch's parameters are restored and
    training stops after ``patience`` epochs without improvement.
    """
    y_train = np.asarray(y_train, dtype=np.float64)
    if not np.all(np.isfinite(y_train)):
        raise ValueError("training targets contain non-finite values")
    params = net.parameters()
    opt = Adam(params, lr=cfg.lr, betas=tuple(cfg.betas), eps=cfg.eps, weight_decay=cfg.weight_decay)
    dropout_rng = np.random.default_rng([cfg.seed, 1])
    target = np.log1p(y_train) if regression else y_train
    history = []
    best_score, best_state, best_epoch, stale = -math.inf, None, -1, 0
    for epoch in range(cfg.max_epochs):
        net.train()
        batch_seed = [cfg.seed, 2, epoch]
        if regression or not cfg.balanced:
            batches = shuffled_batches(len(train_inputs), cfg.batch_size, seed=batch_seed)
        else:
            batches = balanced_batches(y_train, cfg.batch_size, seed=batch_seed)
        losses = []
        for b, idx in enumerate(batches):
            out = net(_slice_inputs(train_inputs, idx), dropout_rng)
            if regression:
                loss = mse_loss(T.softplus(out), target[idx])
            else:
                loss = focal_loss_from_logits(out, target[idx], cfg.focal)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, batch {b}; "
                    f"output range [{np.nanmin(out.data):.3g}, {np.nanmax(out.data):.3g}]"
                )
            opt.zero_grad()
            backward(loss)
            opt.step()
            losses.append(value)
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val_inputs is not None:
            score = validation_score(net, val_inputs, np.asarray(y_val, dtype=np.float64), regression)
            record["val_score"] = score
            if score > best_score:
                best_score, best_state, best_epoch, stale = score, net.state_dict(), epoch, 0
            else:
                stale += 1
        history.append(record)
        if val_inputs is not None and stale >= cfg.patience:
            break
    net.zero_grad()
    if best_state is not None:
        net.load_state_dict(best_state)
    return {"history": history, "best_epoch": best_epoch, "best_score": best_score}
