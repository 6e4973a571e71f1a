"""Small reverse-mode autodiff engine on numpy float64 arrays."""

from .checkpoint import load_tensors, save_tensors
from .gradcheck import check_gradients, numerical_grad, relative_error
from .nn import MLP, Embedding, LayerNorm, Linear, Module, param
from .optim import Adam
from .tensor import (
    ShapeError,
    Tensor,
    add,
    backward,
    clip,
    concat,
    dropout,
    embedding_lookup,
    exp,
    gelu,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    power,
    relu,
    reshape,
    sigmoid,
    slice_,
    softmax,
    softplus,
    sparsemax,
    sparsemax_forward,
    sub,
    sum_,
    tanh,
    transpose,
    where_const,
)

__all__ = [
    "Adam", "Embedding", "LayerNorm", "Linear", "MLP", "Module", "ShapeError", "Tensor",
    "add", "backward", "check_gradients", "clip", "concat", "dropout", "embedding_lookup",
    "exp", "gelu", "layer_norm", "load_tensors", "log", "matmul", "mean", "mul", "neg",
    "numerical_grad", "param", "power", "relative_error", "relu", "reshape", "save_tensors",
    "sigmoid", "slice_", "softmax", "softplus", "sparsemax", "sparsemax_forward", "sub",
    "sum_", "tanh", "transpose", "where_const",
]
