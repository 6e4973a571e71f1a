"""Integrated Gradients with a midpoint Riemann sum.

For inputs ``x`` and baseline ``x'`` the attribution of coordinate i is

    (x_i - x'_i) * mean_k dF/dx_i (x' + (k + 1/2)/m * (x - x'))   for k = 0..m-1

All ``m`` path points of a chunk of samples are stacked into one batch, so
one forward and one backward pass cover the whole chunk. The network must
treat rows independently (no batch statistics), which holds for every
backbone here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, backward
from ..autodiff import tensor as T
from ..models.encoder import EmbeddedInputs, ModelInputs

MIN_STEPS = 16


class AttributionError(RuntimeError):
    pass


@dataclass
class IGConfig:
    steps: int = 256
    target: str = "probability"  # or "logit"
    max_rows: int = 4096

    def __post_init__(self):
        if self.steps < MIN_STEPS:
            raise ValueError(f"IG needs at least {MIN_STEPS} steps, got {self.steps}")
        if self.target not in ("probability", "logit"):
            raise ValueError(f"unknown IG target {self.target!r}")


def midpoints(m):
    return (np.arange(m) + 0.5) / m


def path_integral(fn, inputs, baselines, steps=256):
    """IG for a batch of samples on a generic differentiable function.

    ``fn`` takes a list of Tensors, each shaped ``(rows, ...)``, and returns a
    ``(rows,)`` Tensor; rows must not interact. ``inputs`` and ``baselines``
    are lists of arrays whose first axis indexes samples.

    Returns ``(attributions, f_x, f_baseline)`` where ``attributions`` is a
    list of arrays shaped like ``inputs``.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    inputs = [np.asarray(a, dtype=np.float64) for a in inputs]
    baselines = [np.broadcast_to(np.asarray(b, dtype=np.float64), a.shape) for a, b in zip(inputs, baselines)]
    n = inputs[0].shape[0]
    alphas = midpoints(steps)
    leaves = []
    for a, b in zip(inputs, baselines):
        shape = (1, *([1] * (a.ndim)))
        path = b[None] + alphas.reshape(steps, *shape[1:]) * (a - b)[None]
        leaves.append(Tensor(path.reshape(steps * n, *a.shape[1:]), requires_grad=True))
    out = fn(leaves)
    backward(T.sum_(out))
    attrs = []
    for leaf, a, b in zip(leaves, inputs, baselines):
        g = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
        g = g.reshape(steps, n, *a.shape[1:])
        bad = ~np.isfinite(g)
        if bad.any():
            step = int(np.argwhere(bad)[0][0])
            raise AttributionError(f"non-finite gradient at IG step {step} (alpha={alphas[step]:.6g})")
        attrs.append((a - b) * g.mean(axis=0))
    f_x = fn([Tensor(a) for a in inputs]).data.copy()
    f_b = fn([Tensor(np.ascontiguousarray(b)) for b in baselines]).data.copy()
    return attrs, f_x, f_b


@dataclass
class IGResult:
    feature_names: list[str]
    attributions: np.ndarray  # (samples, features)
    code_attributions: dict[str, np.ndarray] = field(default_factory=dict)  # field -> (samples, vocab)
    f_x: np.ndarray = None
    f_baseline: np.ndarray = None
    residual: np.ndarray = None
    steps: int = 0
    episode_ids: list[str] = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return float(self.residual.max()) if self.residual.size else 0.0

    @property
    def relative_residual(self) -> np.ndarray:
        """residual / (1 + |F(x) - F(x')|), the completeness tolerance scale."""
        return self.residual / (1.0 + np.abs(self.f_x - self.f_baseline))


def _network(model):
    return getattr(model, "network_", model)


def _output(net, target):
    def fn(leaves):
        numeric, rest = leaves[0], leaves[1:]
        n_cat = len(net.encoder.categorical_names)
        cats, bags = rest[:n_cat], rest[n_cat:]
        x = EmbeddedInputs(numeric, list(cats), dict(zip(net.encoder.code_fields, bags)))
        out = net.forward_embedded(x)
        return T.sigmoid(out) if target == "probability" else out

    return fn


def integrated_gradients(model, X, cfg: IGConfig | None = None) -> IGResult:
    """Attribute the model output for every row of ``X`` to its input features.

    Numeric columns are attributed directly; a categorical column's
    attribution is summed over its embedding coordinates; a code field's is
    summed over its codes, and the per-code values are kept as well.
    Baseline: numeric z-score 0 (the training mean), the "None" embedding and
    an empty code set.
    """
    cfg = cfg or IGConfig()
    net = _network(model)
    inputs = X if isinstance(X, ModelInputs) else ModelInputs.from_matrix(X)
    enc = net.encoder
    net.eval()
    n = len(inputs)
    chunk = max(1, cfg.max_rows // cfg.steps)
    fn = _output(net, cfg.target)
    n_num = len(enc.numeric_names)
    feats, codes = [], {f: [] for f in enc.code_fields}
    fx, fb = [], []
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        sub = ModelInputs(inputs.numeric[idx], inputs.categorical[idx], {f: b[idx] for f, b in inputs.bags.items()})
        emb = enc.embed(sub)
        base = enc.baseline(len(idx))
        arrays = [emb.numeric.data, *(c.data for c in emb.categorical), *(emb.bags[f].data for f in enc.code_fields)]
        bases = [base.numeric.data, *(c.data for c in base.categorical), *(base.bags[f].data for f in enc.code_fields)]
        attrs, f_x, f_b = path_integral(fn, arrays, bases, cfg.steps)
        cols = [attrs[0]] if n_num else []
        cols += [a.sum(axis=1, keepdims=True) for a in attrs[1: 1 + len(enc.categorical_names)]]
        for f, a in zip(enc.code_fields, attrs[1 + len(enc.categorical_names):]):
            codes[f].append(a)
            cols.append(a.sum(axis=1, keepdims=True))
        feats.append(np.concatenate(cols, axis=1))
        fx.append(f_x)
        fb.append(f_b)
    net.zero_grad()
    attributions = np.concatenate(feats, axis=0)
    f_x, f_b = np.concatenate(fx), np.concatenate(fb)
    residual = np.abs(attributions.sum(axis=1) - (f_x - f_b))
    names = list(enc.numeric_names) + list(enc.categorical_names) + list(enc.code_fields)
    return IGResult(
        feature_names=names,
        attributions=attributions,
        code_attributions={f: np.concatenate(v, axis=0) for f, v in codes.items()},
        f_x=f_x,
        f_baseline=f_b,
        residual=residual,
        steps=cfg.steps,
        episode_ids=list(getattr(X, "episode_ids", [])),
    )
