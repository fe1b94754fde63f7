"""
Overlap over replay-buffer contents.

The online estimate reads the EMA statistics the buffer already keeps; the
offline reference recomputes hyperballs from the stored inputs.
"""

from dataclasses import dataclass

import numpy as np

from model import SSLModel
from stream.augment import AugmentationConfig

from .latent import HyperballSet, avg_overlap_count, hyperball_summaries, overlap_matrix


@dataclass(frozen=True)
class OverlapEstimate:
    mean_overlap: float        # mean Ov over distinct ordered pairs
    avg_overlap_count: float

    def relative_error(self, reference: "OverlapEstimate") -> float:
        gap = abs(self.mean_overlap - reference.mean_overlap)
        return gap / max(abs(reference.mean_overlap), 1e-12)


def _estimate(balls: HyperballSet, include_self_pairs: bool) -> OverlapEstimate:
    n = len(balls)
    if n < 2:
        raise ValueError("overlap estimate needs at least two entries")
    ov = overlap_matrix(balls.means, balls.angles)
    off_diagonal = ov[~np.eye(n, dtype=bool)]
    return OverlapEstimate(float(off_diagonal.mean()),
                           avg_overlap_count(balls, include_self_pairs))


def online_buffer_overlap(buffer, include_self_pairs: bool = False) -> OverlapEstimate:
    """Overlap from the buffer's stored mean features and mean angles."""
    means, angles = buffer.mean_features, buffer.mean_angles
    return _estimate(HyperballSet(means, angles, np.zeros_like(angles)), include_self_pairs)


def offline_buffer_overlap(model: SSLModel, buffer, cfg: AugmentationConfig, seed: int,
                           n_aug: int = 20, include_self_pairs: bool = False,
                           image_shape=(3, 32, 32)) -> OverlapEstimate:
    """Overlap from fresh ``n_aug``-view hyperballs of the buffer's inputs."""
    balls = hyperball_summaries(model, buffer.inputs, n_aug, cfg, seed,
                                include_self_pairs=include_self_pairs,
                                image_shape=image_shape)
    return _estimate(balls, include_self_pairs)
