"""Integrated Gradients, rank aggregation, patient heatmaps and t-SNE projection."""

from .heatmap import EpisodeHeatmap, patient_heatmap, pick_heatmap_patient
from .icd import icd_chapter
from .ig import AttributionError, IGConfig, IGResult, integrated_gradients, path_integral
from .ranks import AttributionReport, AttributionRun, aggregate_ranks, code_ranking, dense_rank, mean_abs_attribution
from .tsne import TSNE, kl_divergence, one_nn_accuracy, project_embeddings

__all__ = [
    "AttributionError", "AttributionReport", "AttributionRun", "EpisodeHeatmap", "IGConfig", "IGResult", "TSNE",
    "aggregate_ranks", "code_ranking", "dense_rank", "icd_chapter", "integrated_gradients", "kl_divergence",
    "mean_abs_attribution", "one_nn_accuracy", "patient_heatmap", "path_integral", "pick_heatmap_patient",
    "project_embeddings",
]
