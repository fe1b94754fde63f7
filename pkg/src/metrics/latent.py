"""
Hyperball metrics: Deviation, mean angle, Overlap and Average Overlap Count.

Deviation is measured on projected views; mean angle and Overlap on encoder
features. All angles come from numerics.geometry, so Ov(T, T) is exactly
2·θ̄ and identical views have angle 0.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from model import SSLModel, per_sample_stats
from numerics import angle, angle_matrix, cosine_matrix, mean_pairwise_angle
from stream.augment import AugmentationConfig

logger = logging.getLogger(__name__)


@dataclass
class Hyperball:
    views: np.ndarray                       # (n, d_f) encoder features
    mean: np.ndarray                        # (d_f,)
    mean_angle: float
    projections: Optional[np.ndarray] = None  # (n, d_p)

    def __post_init__(self):
        if self.views.ndim != 2 or self.views.shape[0] < 1:
            raise ValueError("a hyperball needs at least one view")

    @classmethod
    def from_views(cls, views: np.ndarray, projections: Optional[np.ndarray] = None,
                   include_self_pairs: bool = True) -> "Hyperball":
        views = np.asarray(views, dtype=np.float64)
        if views.shape[0] == 1:
            theta = 0.0
        else:
            theta = float(mean_pairwise_angle(views, include_self_pairs))
        return cls(views=views, mean=views.mean(axis=0), mean_angle=theta,
                   projections=projections)

    @classmethod
    def from_stats(cls, mean: np.ndarray, mean_angle: float) -> "Hyperball":
        """A summary-only ball (no views), e.g. from replay-buffer statistics."""
        mean = np.asarray(mean, dtype=np.float64)
        return cls(views=mean[None, :], mean=mean, mean_angle=float(mean_angle))


@dataclass
class HyperballSet:
    """Struct-of-arrays summaries of many samples."""

    means: np.ndarray        # (N, d_f)
    angles: np.ndarray       # (N,)
    deviations: np.ndarray   # (N,)

    def __len__(self) -> int:
        return self.angles.shape[0]


# ---------------------------------------------------------------------------
# Single-ball metrics
# ---------------------------------------------------------------------------

def deviation(ball: Union[Hyperball, np.ndarray]) -> float:
    """(1/n^2) sum_{i,j} (1 - cos(z_i, z_j)) over projected views, self-pairs included."""
    views = ball.projections if isinstance(ball, Hyperball) else ball
    if views is None:
        raise ValueError("deviation needs projected views")
    views = np.asarray(views, dtype=np.float64)
    n = views.shape[0]
    if n == 0:
        raise ValueError("deviation of an empty view set")
    gram = cosine_matrix(views, views)
    # a view is aligned with itself, zero-norm views included
    np.fill_diagonal(gram, 1.0)
    return float(1.0 - gram.sum() / (n * n))


def deviations(projections: np.ndarray) -> np.ndarray:
    """Batched deviation for (N, n, d_p) projected views."""
    P = np.asarray(projections, dtype=np.float64)
    norms = np.linalg.norm(P, axis=-1, keepdims=True)
    U = P / np.maximum(norms, 1e-12)
    gram = np.einsum("bid,bjd->bij", U, U)
    n = P.shape[1]
    diag = np.arange(n)
    gram[:, diag, diag] = 1.0
    return 1.0 - gram.sum(axis=(1, 2)) / (n * n)


def mean_angle(views: np.ndarray, include_self_pairs: bool = True) -> float:
    """Average angle over ordered pairs of encoder views (self-pairs count 0)."""
    views = np.asarray(views, dtype=np.float64)
    if views.shape[0] == 0:
        raise ValueError("mean angle of an empty view set")
    if views.shape[0] == 1:
        return 0.0
    return float(mean_pairwise_angle(views, include_self_pairs))


def overlap(a: Hyperball, b: Hyperball) -> float:
    """(θ̄_a + θ̄_b) - angle(z̄_a, z̄_b); positive when the balls intersect."""
    return float(a.mean_angle + b.mean_angle - angle(a.mean, b.mean))


def overlap_matrix(means: np.ndarray, angles: np.ndarray,
                   other_means: Optional[np.ndarray] = None,
                   other_angles: Optional[np.ndarray] = None) -> np.ndarray:
    """All-pairs Overlap between two sets of summaries (or a set and itself)."""
    if other_means is None:
        other_means, other_angles = means, angles
    return (np.asarray(angles)[:, None] + np.asarray(other_angles)[None, :]
            - angle_matrix(means, other_means))


def _as_arrays(dataset) -> tuple:
    if isinstance(dataset, HyperballSet):
        return dataset.means, dataset.angles
    balls = list(dataset)
    if not balls:
        raise ValueError("average overlap count of an empty set")
    return (np.stack([b.mean for b in balls]),
            np.array([b.mean_angle for b in balls], dtype=np.float64))


def avg_overlap_count(dataset: Union[HyperballSet, Sequence[Hyperball]],
                      include_self_pairs: bool = True) -> float:
    """
    Fraction of ordered pairs (i, j) with Ov > 0.

    With ``include_self_pairs`` the double sum runs over all |D|^2 pairs,
    so every ball with θ̄ > 0 counts against itself.
    """
    means, angles = _as_arrays(dataset)
    size = angles.shape[0]
    if size == 0:
        raise ValueError("average overlap count of an empty set")
    positive = overlap_matrix(means, angles) > 0
    if include_self_pairs:
        return float(positive.sum() / (size * size))
    if size == 1:
        return 0.0
    return float((positive.sum() - np.trace(positive)) / (size * (size - 1)))


# ---------------------------------------------------------------------------
# Hyperball construction
# ---------------------------------------------------------------------------

def hyperball_summary(model: SSLModel, sample: np.ndarray, n_aug: int = 20,
                      cfg: Optional[AugmentationConfig] = None,
                      rng: Optional[np.random.Generator] = None,
                      include_self_pairs: Optional[bool] = None,
                      image_shape=(3, 32, 32)) -> Hyperball:
    """Offline hyperball of one sample from ``n_aug`` augmented views of the frozen model."""
    cfg = cfg or AugmentationConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    stats = per_sample_stats(model, np.asarray(sample)[None, :], n_aug, cfg, rng,
                             include_self_pairs=include_self_pairs, image_shape=image_shape)
    return Hyperball(views=stats.features[0], mean=stats.mean_feature[0],
                     mean_angle=float(stats.mean_angle[0]),
                     projections=stats.projections[0])


def hyperball_summaries(model: SSLModel, X: np.ndarray, n_aug: int = 20,
                        cfg: Optional[AugmentationConfig] = None, seed: int = 0,
                        include_self_pairs: Optional[bool] = None,
                        chunk: int = 256, image_shape=(3, 32, 32)) -> HyperballSet:
    """Hyperball summaries of every row of ``X`` with a fixed augmentation seed."""
    cfg = cfg or AugmentationConfig()
    rng = np.random.default_rng(seed)
    means, angles, devs = [], [], []
    for start in range(0, X.shape[0], chunk):
        stats = per_sample_stats(model, X[start:start + chunk], n_aug, cfg, rng,
                                 include_self_pairs=include_self_pairs,
                                 image_shape=image_shape)
        means.append(stats.mean_feature)
        angles.append(stats.mean_angle)
        devs.append(deviations(stats.projections))
    if not means:
        raise ValueError("no samples to summarize")
    return HyperballSet(np.concatenate(means), np.concatenate(angles), np.concatenate(devs))
