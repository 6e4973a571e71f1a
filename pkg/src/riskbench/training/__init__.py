"""Losses, batching, cross-validation plans, metrics and the training loop."""

from .batches import balanced_batches, shuffled_batches
from .folds import FoldPlan, make_folds
from .losses import FocalLossConfig, focal_loss, focal_loss_from_logits, mse_loss
from .loop import TrainConfig, TrainingError, fit_network
from .metrics import auprc, auroc, metric_report, rmse, sens_spec

__all__ = [
    "FocalLossConfig", "FoldPlan", "TrainConfig", "TrainingError", "auprc", "auroc", "balanced_batches",
    "fit_network", "focal_loss", "focal_loss_from_logits", "make_folds", "metric_report", "mse_loss",
    "rmse", "sens_spec", "shuffled_batches",
]
