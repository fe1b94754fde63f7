"""Latent-space diagnostics: Deviation, Overlap, uniformity and SVD collapse."""

from .collapse import CollapseSpectrum, cev_levels, svd_collapse_metrics, uniformity_loss
from .latent import (
    Hyperball,
    HyperballSet,
    avg_overlap_count,
    deviation,
    deviations,
    hyperball_summaries,
    hyperball_summary,
    mean_angle,
    overlap,
    overlap_matrix,
)
from .online import online_buffer_overlap, offline_buffer_overlap
from .report import latent_report

__all__ = [
    "CollapseSpectrum",
    "cev_levels",
    "svd_collapse_metrics",
    "uniformity_loss",
    "Hyperball",
    "HyperballSet",
    "avg_overlap_count",
    "deviation",
    "deviations",
    "hyperball_summaries",
    "hyperball_summary",
    "mean_angle",
    "overlap",
    "overlap_matrix",
    "online_buffer_overlap",
    "offline_buffer_overlap",
    "latent_report",
]
