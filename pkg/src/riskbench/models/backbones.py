"""Tabular backbones over encoder blocks: residual MLP, column transformer, sequential-attention net."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import MLP, LayerNorm, Linear, Module, Tensor
from ..autodiff import tensor as T

BACKBONES = ("resnet", "tabtransformer", "tabnet")
DEFAULT_DEPTH = {"resnet": 4, "tabtransformer": 2, "tabnet": 0}


@dataclass
class BackboneConfig:
    kind: str = "tabtransformer"
    depth: int | None = None
    heads: int = 4
    n_steps: int = 3
    gamma: float = 1.3
    hidden: int = 64
    head_hidden: tuple = (64, 32)
    n_d: int = 16
    n_a: int = 16
    dropout: float = 0.1

    def __post_init__(self):
        if self.kind not in BACKBONES:
            raise ValueError(f"unknown backbone {self.kind!r}; choose from {BACKBONES}")
        if self.depth is None:
            self.depth = DEFAULT_DEPTH[self.kind]
        self.head_hidden = tuple(self.head_hidden)
        if self.depth < 0 or self.n_steps < 1 or self.heads < 1:
            raise ValueError("depth must be >= 0, n_steps and heads >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self):
        out = asdict(self)
        out["head_hidden"] = list(self.head_hidden)
        return out


def stack_tokens(blocks):
    """List of (B, d) tensors -> (B, n, d)."""
    b, d = blocks[0].shape
    return T.concat([T.reshape(x, (b, 1, d)) for x in blocks], axis=1)


class ResNetBackbone(Module):
    """``x <- x + MLP(layer_norm(x))`` blocks on the fused vector, then a linear head."""

    def __init__(self, width, cfg: BackboneConfig, rng):
        self.norms = [LayerNorm(width) for _ in range(cfg.depth)]
        self.blocks = [MLP([width, cfg.hidden, width], rng, dropout=cfg.dropout) for _ in range(cfg.depth)]
        self.out_dim = width
        self.dropout = cfg.dropout

    def hidden(self, blocks, rng=None):
        x = T.concat(blocks, axis=-1)
        for norm, mlp in zip(self.norms, self.blocks):
            x = x + T.dropout(mlp(norm(x), rng), self.dropout, self.training, rng)
        return x


class MultiHeadAttention(Module):
    def __init__(self, d, heads, rng):
        if d % heads:
            raise ValueError(f"heads ({heads}) must divide model width ({d})")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.last_weights = None

    def _split(self, x, b, n):
        h = self.heads
        dk = x.shape[-1] // h
        return T.reshape(T.transpose(T.reshape(x, (b, n, h, dk)), (0, 2, 1, 3)), (b * h, n, dk))

    def __call__(self, x):
        b, n, d = x.shape
        h = self.heads
        dk = d // h
        q, k, v = self._split(self.q(x), b, n), self._split(self.k(x), b, n), self._split(self.v(x), b, n)
        scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dk))
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data.reshape(b, h, n, n)
        ctx = T.matmul(weights, v)
        ctx = T.reshape(T.transpose(T.reshape(ctx, (b, h, n, dk)), (0, 2, 1, 3)), (b, n, d))
        return self.o(ctx)


class TransformerLayer(Module):
    """Post-norm encoder layer: attention then feed-forward, each with residual and layer norm."""

    def __init__(self, d, heads, hidden, dropout, rng):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.ff = MLP([d, hidden, d], rng, dropout=dropout)
        self.norm2 = LayerNorm(d)
        self.dropout = dropout

    def __call__(self, x, rng=None):
        x = self.norm1(x + T.dropout(self.attn(x), self.dropout, self.training, rng))
        return self.norm2(x + T.dropout(self.ff(x, rng), self.dropout, self.training, rng))


class TabTransformerBackbone(Module):
    """Self-attention over categorical and code-set tokens; the numeric block joins after layer norm.

    Columns carry no positional encoding, so the layers are equivariant to
    token permutations.
    """

    def __init__(self, d, n_tokens, has_numeric, cfg: BackboneConfig, rng):
        if n_tokens < 1:
            raise ValueError("the column transformer needs at least one categorical or code token")
        self.layers = [TransformerLayer(d, cfg.heads, cfg.hidden, cfg.dropout, rng) for _ in range(cfg.depth)]
        self.has_numeric = has_numeric
        self.numeric_norm = LayerNorm(d) if has_numeric else None
        in_dim = n_tokens * d + (d if has_numeric else 0)
        self.mlp = MLP([in_dim, *cfg.head_hidden], rng, dropout=cfg.dropout, final_activation=True)
        self.out_dim = cfg.head_hidden[-1] if cfg.head_hidden else in_dim

    def contextualize(self, tokens, rng=None):
        for layer in self.layers:
            tokens = layer(tokens, rng)
        return tokens

    def attention_weights(self):
        return [layer.attn.last_weights for layer in self.layers]

    def hidden(self, blocks, rng=None):
        numeric, columns = (blocks[0], blocks[1:]) if self.has_numeric else (None, blocks)
        ctx = self.contextualize(stack_tokens(columns), rng)
        b, n, d = ctx.shape
        parts = [T.reshape(ctx, (b, n * d))]
        if numeric is not None:
            parts.append(self.numeric_norm(numeric))
        return self.mlp(T.concat(parts, axis=-1), rng)


class GLULayer(Module):
    def __init__(self, n_in, n_out, rng):
        self.fc = Linear(n_in, 2 * n_out, rng)
        self.n_out = n_out

    def __call__(self, x):
        h = self.fc(x)
        return h[:, : self.n_out] * T.sigmoid(h[:, self.n_out:])


class FeatureTransformer(Module):
    def __init__(self, n_in, n_out, rng):
        self.first = GLULayer(n_in, n_out, rng)
        self.second = GLULayer(n_out, n_out, rng)

    def __call__(self, x):
        h = self.first(x)
        return (h + self.second(h)) * math.sqrt(0.5)


class TabNetBackbone(Module):
    """Sequential attention: each step selects feature blocks with a sparsemax mask scaled by a prior.

    A mask has one entry per encoder block and scales all ``d`` coordinates
    of that block. The prior starts at one and is multiplied by
    ``gamma - M`` after every step, so with ``gamma = 1`` a block that took
    all of a mask's mass can no longer be chosen.
    """

    def __init__(self, d, n_blocks, cfg: BackboneConfig, rng):
        self.n_d, self.n_a = cfg.n_d, cfg.n_a
        self.gamma = cfg.gamma
        self.n_blocks = n_blocks
        width = d * n_blocks
        self.expand = np.kron(np.eye(n_blocks), np.ones((1, d)))
        self.input_norm = LayerNorm(width)
        self.initial = FeatureTransformer(width, self.n_d + self.n_a, rng)
        self.attentive = [Linear(self.n_a, n_blocks, rng) for _ in range(cfg.n_steps)]
        self.steps = [FeatureTransformer(width, self.n_d + self.n_a, rng) for _ in range(cfg.n_steps)]
        self.out_dim = self.n_d
        self.last_masks = []
        self.last_priors = []

    def hidden(self, blocks, rng=None):
        x = self.input_norm(T.concat(blocks, axis=-1))
        prior = Tensor(np.ones((x.shape[0], self.n_blocks)))
        expand = Tensor(self.expand)
        a = self.initial(x)[:, self.n_d:]
        out = None
        masks, priors = [], []
        for att, ft in zip(self.attentive, self.steps):
            logits = T.where_const(prior.data > 0, att(a) * prior, -1e9)
            mask = T.sparsemax(logits, axis=-1)
            masks.append(mask.data)
            prior = prior * (self.gamma - mask)
            priors.append(prior.data)
            h = ft(T.matmul(mask, expand) * x)
            step_out = T.gelu(h[:, : self.n_d])
            out = step_out if out is None else out + step_out
            a = h[:, self.n_d:]
        self.last_masks = masks
        self.last_priors = priors
        return out


def build_backbone(cfg: BackboneConfig, d, block_names, rng):
    width = len(block_names) * d
    if cfg.kind == "resnet":
        return ResNetBackbone(width, cfg, rng)
    if cfg.kind == "tabnet":
        return TabNetBackbone(d, len(block_names), cfg, rng)
    has_numeric = bool(block_names) and block_names[0] == "numeric"
    return TabTransformerBackbone(d, len(block_names) - int(has_numeric), has_numeric, cfg, rng)


class RiskNetwork(Module):
    """Encoder, backbone and a scalar head; outputs one logit (or pre-softplus value) per row."""

    def __init__(self, schema, enc_cfg, bb_cfg: BackboneConfig, seed=0):
        from .encoder import Encoder

        rng = np.random.default_rng(seed)
        self.encoder = Encoder(schema, enc_cfg, rng)
        self.backbone = build_backbone(bb_cfg, enc_cfg.d, self.encoder.block_names, rng)
        self.head = Linear(self.backbone.out_dim, 1, rng)

    def hidden_from_embedded(self, x, rng=None):
        return self.backbone.hidden(self.encoder.project(x, rng), rng)

    def forward_embedded(self, x, rng=None):
        h = self.hidden_from_embedded(x, rng)
        return T.reshape(self.head(h), (h.shape[0],))

    def __call__(self, inputs, rng=None):
        return self.forward_embedded(self.encoder.embed(inputs), rng)

    def representation(self, inputs):
        return self.hidden_from_embedded(self.encoder.embed(inputs)).data
