"""
Per-sample SimSiam loss, the multi-view SSL loss and per-sample latent
statistics (mean feature z̄, mean pairwise angle θ̄).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from numerics import ValueGraph, cosine_matrix, mean_pairwise_angle
from stream.augment import AugmentationConfig, augment_batch

from .simsiam import SSLModel

logger = logging.getLogger(__name__)

# Loss values kept by replay buffers are shifted by this amount so they are nonnegative.
LOSS_SHIFT = 1.0


@dataclass
class PerSampleOutput:
    loss: Optional[np.ndarray]      # ℓ + 1, only for two views
    mean_feature: np.ndarray        # (N, d_f)
    mean_angle: np.ndarray          # (N,) radians
    features: np.ndarray            # (N, n_views, d_f)
    projections: np.ndarray         # (N, n_views, d_p)


# ---------------------------------------------------------------------------
# Graph builders
# ---------------------------------------------------------------------------

def pair_loss_node(graph: ValueGraph, p1: int, p2: int, z1: int, z2: int) -> int:
    """Per-sample -1/2 [cos(p1, sg z2) + cos(p2, sg z1)] as a graph node."""
    c1 = graph.cosine(p1, graph.stop_gradient(z2))
    c2 = graph.cosine(p2, graph.stop_gradient(z1))
    return graph.scale(graph.add(c1, c2), -0.5, name="pair_loss")


def latent_stat_nodes(graph: ValueGraph, f1: int, f2: int,
                      include_self_pairs: bool = True) -> Tuple[int, int]:
    """
    Live z̄ and θ̄ of two encoder views.

    With self-pairs the ordered-pair mean over 2x2 pairs is
    (0 + a + a + 0) / 4 = a / 2; without them it is a.
    """
    zbar = graph.scale(graph.add(f1, f2), 0.5, name="mean_feature")
    theta = graph.arccos(graph.cosine(f1, f2))
    theta = graph.scale(theta, 0.5 if include_self_pairs else 1.0, name="mean_angle")
    return zbar, theta


# ---------------------------------------------------------------------------
# Array-level entry points
# ---------------------------------------------------------------------------

def simsiam_pair_loss(p1: np.ndarray, p2: np.ndarray, z1: np.ndarray, z2: np.ndarray
                      ) -> np.ndarray:
    """Per-sample SimSiam loss in [-1, 1] for batches of predictions and projections."""
    shapes = {np.shape(a) for a in (p1, p2, z1, z2)}
    if len(shapes) != 1:
        raise ValueError(f"batch shapes disagree: {sorted(shapes)}")
    graph = ValueGraph()
    ids = [graph.constant(np.asarray(a, dtype=np.float64)) for a in (p1, p2, z1, z2)]
    return graph.value(pair_loss_node(graph, *ids))


def multiview_ssl_loss(views: np.ndarray) -> float:
    """-sum over ordered pairs i != j of cos(z_i, z_j)."""
    views = np.asarray(views, dtype=np.float64)
    if views.ndim != 2 or views.shape[0] < 2:
        raise ValueError(f"need at least two views as an (n, d) array, got {views.shape}")
    sims = cosine_matrix(views, views)
    return float(-(sims.sum() - np.trace(sims)))


def per_sample_stats(model: SSLModel, x: np.ndarray, n_views: int, cfg: AugmentationConfig,
                     rng: np.random.Generator, include_self_pairs: Optional[bool] = None,
                     image_shape=(3, 32, 32)) -> PerSampleOutput:
    """
    Draw ``n_views`` augmentations of every row of ``x`` and summarize them
    with the frozen (eval-mode) model.

    z̄ is the mean of the encoder features; θ̄ the mean angle over ordered
    pairs in encoder space. The shifted SimSiam loss is reported when
    ``n_views == 2``.
    """
    if n_views < 2:
        raise ValueError(f"n_views must be at least 2, got {n_views}")
    if include_self_pairs is None:
        include_self_pairs = model.cfg.include_self_pairs
    X = np.atleast_2d(x)

    feats, projs, preds = [], [], []
    for _ in range(n_views):
        f, z, p = model.embed(augment_batch(X, cfg, rng, image_shape))
        feats.append(f)
        projs.append(z)
        preds.append(p)
    features = np.stack(feats, axis=1).astype(np.float64)
    projections = np.stack(projs, axis=1).astype(np.float64)

    loss = None
    if n_views == 2:
        loss = simsiam_pair_loss(preds[0], preds[1], projs[0], projs[1]) + LOSS_SHIFT

    return PerSampleOutput(
        loss=loss,
        mean_feature=features.mean(axis=1),
        mean_angle=mean_pairwise_angle(features, include_self_pairs),
        features=features,
        projections=projections,
    )
