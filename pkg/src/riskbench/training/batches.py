"""Class-balanced mini-batches with minority oversampling."""

from __future__ import annotations

import math

import numpy as np


def balanced_batches(labels, batch_size, seed=0, n_batches=None):
    """Yield index arrays with ``ceil(b/2)`` positives and ``floor(b/2)`` negatives.

    Positives are drawn with replacement; negatives walk a shuffled permutation
    that is reshuffled when exhausted. An epoch defaults to ``ceil(n / b)``
    batches. The returned indices point into ``labels``, so every batch row is
    an exact copy of a source row.
    """
    y = np.asarray(labels)
    if batch_size < 2:
        raise ValueError(f"balanced batches need batch_size >= 2, got {batch_size}")
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if pos.size == 0 or neg.size == 0:
        raise ValueError(f"balanced batches need both classes, got {pos.size} positives and {neg.size} negatives")
    rng = np.random.default_rng(seed)
    n_pos = (batch_size + 1) // 2
    n_neg = batch_size // 2
    if n_batches is None:
        n_batches = math.ceil(y.size / batch_size)
    order = rng.permutation(neg)
    cursor = 0
    for _ in range(n_batches):
        take = []
        need = n_neg
        while need:
            if cursor == order.size:
                order = rng.permutation(neg)
                cursor = 0
            chunk = order[cursor: cursor + need]
            cursor += chunk.size
            need -= chunk.size
            take.append(chunk)
        batch = np.concatenate([rng.choice(pos, size=n_pos, replace=True), *take])
        yield rng.permutation(batch)


def shuffled_batches(n, batch_size, seed=0):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start: start + batch_size]
