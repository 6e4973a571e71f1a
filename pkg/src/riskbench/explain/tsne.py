"""Exact t-SNE (O(n^2) memory) for projecting learned episode representations."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

MAX_POINTS = 5000
EXAGGERATION_ITERS = 250


def _sq_distances(X):
    s = np.sum(X * X, axis=1)
    d = s[:, None] + s[None, :] - 2.0 * X @ X.T
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_affinities(D, perplexity, tol=1e-5, max_iter=100):
    """Row-stochastic P with each row's entropy matched to log(perplexity) by bisection on the precision."""
    n = D.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(D[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-(d - d.min()) * beta)
            s = w.sum()
            p = w / s
            h = -np.sum(p * np.log(np.maximum(p, 1e-300)))
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = p
    return P


def joint_affinities(X, perplexity):
    P = conditional_affinities(_sq_distances(X), perplexity)
    P = (P + P.T) / (2.0 * P.shape[0])
    return np.maximum(P, 1e-12)


def kl_divergence(P, Y):
    num = 1.0 / (1.0 + _sq_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    mask = ~np.eye(P.shape[0], dtype=bool)
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def project_embeddings(X, perplexity=30.0, n_iter=1000, seed=0, learning_rate=200.0, exaggeration=12.0):
    """Exact t-SNE to 2-D. Returns ``(coordinates, final KL, KL after the exaggeration phase)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError(f"need a (n, dim >= 2) array, got shape {X.shape}")
    n = X.shape[0]
    if n > MAX_POINTS:
        raise ValueError(f"exact t-SNE is limited to {MAX_POINTS} points, got {n}")
    if perplexity >= n / 3.0:
        raise ValueError(f"perplexity {perplexity} must be below n/3 = {n / 3.0:.3g}")
    P = joint_affinities(X, perplexity)
    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_after_exaggeration = None
    for it in range(n_iter):
        exag = exaggeration if it < EXAGGERATION_ITERS else 1.0
        momentum = 0.5 if it < EXAGGERATION_ITERS else 0.8
        num = 1.0 / (1.0 + _sq_distances(Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (exag * P - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if it == EXAGGERATION_ITERS - 1:
            kl_after_exaggeration = kl_divergence(P, Y)
    return Y, kl_divergence(P, Y), kl_after_exaggeration


class TSNE(TransformerMixin, BaseEstimator):
    def __init__(self, perplexity=30.0, n_iter=1000, seed=0, learning_rate=200.0):
        self.perplexity = perplexity
        self.n_iter = n_iter
        self.seed = seed
        self.learning_rate = learning_rate

    def fit_transform(self, X, y=None):
        Y, kl, kl_mid = project_embeddings(X, self.perplexity, self.n_iter, self.seed, self.learning_rate)
        self.embedding_ = Y
        self.kl_divergence_ = kl
        self.kl_after_exaggeration_ = kl_mid
        return Y

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self


def one_nn_accuracy(coords, labels):
    """Leave-one-out 1-nearest-neighbour accuracy in the projected space."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    D = _sq_distances(coords)
    np.fill_diagonal(D, np.inf)
    return float(np.mean(labels[np.argmin(D, axis=1)] == labels))
