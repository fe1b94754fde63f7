"""SimSiam-style model, its losses and per-sample latent statistics."""

from .losses import (
    LOSS_SHIFT,
    PerSampleOutput,
    latent_stat_nodes,
    multiview_ssl_loss,
    pair_loss_node,
    per_sample_stats,
    simsiam_pair_loss,
)
from .simsiam import ModelConfig, SSLModel, ViewForward, encode, forward_views

__all__ = [
    "LOSS_SHIFT",
    "PerSampleOutput",
    "latent_stat_nodes",
    "multiview_ssl_loss",
    "pair_loss_node",
    "per_sample_stats",
    "simsiam_pair_loss",
    "ModelConfig",
    "SSLModel",
    "ViewForward",
    "encode",
    "forward_views",
]
