"""
Synthetic Gaussian-cluster stream.

Class c is an isotropic unit-variance Gaussian centred at a seeded random
unit direction scaled by ``cluster_scale``.
"""

import logging
from typing import Dict, Optional

import numpy as np

from .base_source import BaseSource
from .dataset import LabeledDataset

logger = logging.getLogger(__name__)


def _class_centers(num_classes: int, dim: int, cluster_scale: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return cluster_scale * directions


def generate_synthetic(num_classes: int, per_class: int, dim: int,
                       cluster_scale: float, seed: int,
                       sample_seed: Optional[int] = None) -> LabeledDataset:
    """
    Draw ``per_class`` samples for each of ``num_classes`` Gaussian clusters.

    Args:
        sample_seed: Seed for the noise draws. Defaults to ``seed``; a
            different value gives a fresh sample around the same centres.
    """
    if min(num_classes, per_class, dim) <= 0:
        raise ValueError("num_classes, per_class and dim must be positive")
    centers = _class_centers(num_classes, dim, cluster_scale, seed)
    rng = np.random.default_rng([seed, 1] if sample_seed is None else [sample_seed, 2])
    labels = np.repeat(np.arange(num_classes), per_class)
    X = centers[labels] + rng.standard_normal((labels.size, dim))
    return LabeledDataset(X, labels, num_classes)


class SyntheticSource(BaseSource):
    """Synthetic clusters; nothing to download."""

    def __init__(self, num_classes: int = 10, per_class: int = 200, dim: int = 32,
                 cluster_scale: float = 3.0, seed: int = 0, test_per_class: int = 50,
                 data_dir: Optional[str] = None):
        super().__init__(data_dir)
        self.num_classes = num_classes
        self.per_class = per_class
        self.dim = dim
        self.cluster_scale = cluster_scale
        self.seed = seed
        self.test_per_class = test_per_class

    def download_data(self) -> bool:
        return True

    def load_data(self) -> Dict[str, LabeledDataset]:
        train = generate_synthetic(self.num_classes, self.per_class, self.dim,
                                   self.cluster_scale, self.seed)
        test = generate_synthetic(self.num_classes, self.test_per_class, self.dim,
                                  self.cluster_scale, self.seed, sample_seed=self.seed + 7919)
        logger.info(f"Synthetic stream: {len(train)} train / {len(test)} test samples, "
                    f"{self.num_classes} classes, dim {self.dim}")
        return {"train": train, "test": test}

    def get_schema(self) -> Dict[str, str]:
        return {
            "layout": "vector",
            "dim": str(self.dim),
            "num_classes": str(self.num_classes),
        }
