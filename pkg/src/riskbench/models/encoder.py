"""Per-type encoders that project every feature block into a shared width ``d``.

The forward pass is split in two so attribution can interpolate between an
input and its baseline in embedding space:

* :meth:`Encoder.embed` turns a batch into differentiable leaf inputs:
  the standardized numeric block, one embedding row per categorical column
  and a mean-pooling weight matrix per code field;
* :meth:`Encoder.project` maps those inputs to ``d``-wide blocks.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import MLP, Embedding, Linear, Module, Tensor
from ..autodiff import tensor as T
from ..features import FeatureMatrix, FeatureSchema

log = logging.getLogger(__name__)

TEXT_DIM = 768


@dataclass
class EncoderConfig:
    d: int = 32
    numeric_hidden: tuple = (64,)
    code_hidden: tuple = (32,)
    code_dim: int | None = None
    code_vectors: str | None = None
    text_vectors: str | None = None
    text_field: str = "diagnosis_codes"

    def to_dict(self):
        out = asdict(self)
        out["numeric_hidden"] = list(self.numeric_hidden)
        out["code_hidden"] = list(self.code_hidden)
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["numeric_hidden"] = tuple(d.get("numeric_hidden", (64,)))
        d["code_hidden"] = tuple(d.get("code_hidden", (32,)))
        return cls(**d)


@dataclass
class ModelInputs:
    """Array view of a batch: numeric z-scores, vocabulary indices and code bags."""

    numeric: np.ndarray
    categorical: np.ndarray
    bags: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return self.numeric.shape[0]

    @classmethod
    def from_matrix(cls, X: FeatureMatrix, idx=None):
        if idx is not None:
            X = X.take(idx)
        return cls(X.numeric, X.categorical, {f: X.code_bag(f) for f in X.schema.code_fields})


@dataclass
class EmbeddedInputs:
    """Leaf tensors the backbone is differentiable in."""

    numeric: Tensor
    categorical: list[Tensor]
    bags: dict[str, Tensor]


def read_vector_file(path) -> dict[str, np.ndarray]:
    """``code,v1,...,vK`` rows -> {code: vector}; every row must have the same K."""
    out = {}
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or (lineno == 1 and row[0] == "code"):
                continue
            vec = np.array([float(v) for v in row[1:]])
            if width is None:
                width = vec.size
            elif vec.size != width:
                raise ValueError(f"{path}:{lineno}: expected {width} values, got {vec.size}")
            out[row[0].strip()] = vec
    if not out:
        raise ValueError(f"{path}: no vectors")
    return out


def _vector_table(vectors, vocab, rng, fallback_scale=0.1, what="code"):
    width = len(next(iter(vectors.values())))
    table = np.empty((len(vocab), width))
    missing = 0
    for i, code in enumerate(vocab):
        v = vectors.get(code)
        if v is None:
            missing += 1
            table[i] = rng.normal(0.0, fallback_scale, size=width)
        else:
            table[i] = v
    if missing:
        log.warning("%d of %d %ss have no pretrained vector; using random init", missing, len(vocab), what)
    return table


class Encoder(Module):
    def __init__(self, schema: FeatureSchema, cfg: EncoderConfig, rng):
        self.cfg = cfg
        d = cfg.d
        self.numeric_names = list(schema.numeric_names)
        self.categorical_names = list(schema.categorical_names)
        self.code_fields = list(schema.code_fields)
        self.none_index = [schema.none_index(n) for n in self.categorical_names]
        n_num = len(self.numeric_names)
        self.numeric_mlp = MLP([n_num, *cfg.numeric_hidden, d], rng) if n_num else None
        self.cat_embeddings = [Embedding(len(schema.vocabularies[n]), d, rng) for n in self.categorical_names]

        pretrained = read_vector_file(cfg.code_vectors) if cfg.code_vectors else None
        self.code_tables = []
        self.code_mlps = []
        for f in self.code_fields:
            vocab = schema.code_vocabularies[f]
            if pretrained is not None:
                init = _vector_table(pretrained, vocab, rng)
                emb = Embedding(len(vocab), init.shape[1], rng, init=init)
            else:
                emb = Embedding(len(vocab), cfg.code_dim or d, rng)
            self.code_tables.append(emb)
            self.code_mlps.append(MLP([emb.table.shape[1], *cfg.code_hidden, d], rng))

        self.text_table = None
        self.text_proj = None
        if cfg.text_vectors:
            if cfg.text_field not in self.code_fields:
                raise ValueError(f"text_field {cfg.text_field!r} is not a code field of the schema")
            vectors = read_vector_file(cfg.text_vectors)
            table = np.zeros((len(schema.code_vocabularies[cfg.text_field]), len(next(iter(vectors.values())))))
            for i, code in enumerate(schema.code_vocabularies[cfg.text_field]):
                if code in vectors:
                    table[i] = vectors[code]
            # frozen: the description vectors are an input, not a parameter
            self.text_table = Tensor(table)
            self.text_proj = Linear(table.shape[1], d, rng)

    @property
    def block_names(self) -> list[str]:
        names = ["numeric"] if self.numeric_mlp is not None else []
        names += [f"cat:{n}" for n in self.categorical_names]
        names += [f"codes:{f}" for f in self.code_fields]
        if self.text_proj is not None:
            names.append(f"text:{self.cfg.text_field}")
        return names

    @property
    def n_blocks(self) -> int:
        return len(self.block_names)

    @property
    def width(self) -> int:
        return self.n_blocks * self.cfg.d

    def embed(self, inputs: ModelInputs, requires_grad=False) -> EmbeddedInputs:
        if inputs.numeric.shape[1] != len(self.numeric_names):
            raise ValueError(f"expected {len(self.numeric_names)} numeric columns, got {inputs.numeric.shape[1]}")
        if inputs.categorical.shape[1] != len(self.categorical_names):
            raise ValueError(
                f"expected {len(self.categorical_names)} categorical columns, got {inputs.categorical.shape[1]}"
            )
        cats = [
            Tensor(emb.table.data[inputs.categorical[:, j]], requires_grad=requires_grad)
            if requires_grad else emb(inputs.categorical[:, j])
            for j, emb in enumerate(self.cat_embeddings)
        ]
        bags = {f: Tensor(inputs.bags[f], requires_grad=requires_grad) for f in self.code_fields}
        return EmbeddedInputs(Tensor(inputs.numeric, requires_grad=requires_grad), cats, bags)

    def baseline(self, n: int) -> EmbeddedInputs:
        """Uninformative patient: train-mean numerics, "None" categories, empty code sets."""
        cats = [Tensor(np.repeat(emb.table.data[k][None, :], n, axis=0))
                for emb, k in zip(self.cat_embeddings, self.none_index)]
        bags = {f: Tensor(np.zeros((n, emb.table.shape[0]))) for f, emb in zip(self.code_fields, self.code_tables)}
        return EmbeddedInputs(Tensor(np.zeros((n, len(self.numeric_names)))), cats, bags)

    def project(self, x: EmbeddedInputs, rng=None) -> list[Tensor]:
        blocks = []
        if self.numeric_mlp is not None:
            blocks.append(self.numeric_mlp(x.numeric, rng))
        blocks.extend(x.categorical)
        for f, table, mlp in zip(self.code_fields, self.code_tables, self.code_mlps):
            pooled = T.matmul(x.bags[f], table.table)
            blocks.append(mlp(pooled, rng))
        if self.text_proj is not None:
            blocks.append(self.text_proj(T.matmul(x.bags[self.cfg.text_field], self.text_table)))
        return blocks

    def __call__(self, inputs: ModelInputs, rng=None) -> list[Tensor]:
        return self.project(self.embed(inputs), rng)
