"""Focal loss, as a plain numpy function and as a differentiable graph op."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import Tensor
from ..autodiff import tensor as T

P_CLAMP = 1e-7


@dataclass(frozen=True)
class FocalLossConfig:
    gamma: float = 2.0
    alpha: float = 0.25

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"focal gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"focal alpha must lie in (0, 1], got {self.alpha}")

    def to_dict(self):
        return asdict(self)


def focal_loss(p, y, gamma=2.0, alpha=0.25):
    """Per-row ``-alpha_t (1 - p_t)^gamma log p_t`` with ``p`` clamped to [1e-7, 1 - 1e-7].

    ``alpha`` weights the positive class only (negatives get weight 1), so
    ``gamma=0, alpha=1`` is plain binary cross-entropy.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    pt = np.where(y == 1, p, 1.0 - p)
    at = np.where(y == 1, alpha, 1.0)
    return -at * (1.0 - pt) ** gamma * np.log(pt)


def focal_loss_from_logits(logits: Tensor, y, cfg: FocalLossConfig) -> Tensor:
    """Mean focal loss over the batch as a graph node."""
    y = np.asarray(y, dtype=np.float64)
    p = T.clip(T.sigmoid(logits), P_CLAMP, 1.0 - P_CLAMP)
    # p_t = y p + (1 - y)(1 - p)
    pt = p * Tensor(2.0 * y - 1.0) + Tensor(1.0 - y)
    at = np.where(y == 1, cfg.alpha, 1.0)
    loss = T.log(pt) * Tensor(-at)
    if cfg.gamma:
        loss = loss * T.power(1.0 - pt, cfg.gamma)
    return T.mean(loss)


def mse_loss(pred: Tensor, target) -> Tensor:
    diff = pred - Tensor(np.asarray(target, dtype=np.float64))
    return T.mean(diff * diff)
