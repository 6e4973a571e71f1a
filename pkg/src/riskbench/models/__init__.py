"""Encoder-fusion tabular networks and their estimator wrapper."""

from .backbones import (
    BACKBONES,
    BackboneConfig,
    MultiHeadAttention,
    ResNetBackbone,
    RiskNetwork,
    TabNetBackbone,
    TabTransformerBackbone,
    TransformerLayer,
)
from .encoder import EmbeddedInputs, Encoder, EncoderConfig, ModelInputs, read_vector_file
from .estimator import TabularRiskModel, check_backbone, check_feature_matrix, check_task

__all__ = [
    "BACKBONES", "BackboneConfig", "EmbeddedInputs", "Encoder", "EncoderConfig", "ModelInputs",
    "MultiHeadAttention", "ResNetBackbone", "RiskNetwork", "TabNetBackbone", "TabTransformerBackbone",
    "TabularRiskModel", "TransformerLayer", "check_backbone", "check_feature_matrix", "check_task",
    "read_vector_file",
]
