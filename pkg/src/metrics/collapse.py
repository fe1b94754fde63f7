"""Uniformity loss and singular-value collapse diagnostics on encoder features."""

import logging
from dataclasses import dataclass
from typing import Dict, List

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import logsumexp

from numerics import unit_rows

logger = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class CollapseSpectrum:
    spectrum: np.ndarray     # singular values, descending
    normalized: np.ndarray   # spectrum / spectrum[0]
    cumulative: np.ndarray   # cumulative explained variance

    def cev_at(self, k: int) -> float:
        """CEV(k) for 1-based k, saturating at the last component."""
        return float(self.cumulative[min(k, self.cumulative.size) - 1])


def uniformity_loss(features: np.ndarray, t: float = 2.0) -> float:
    """log mean over unordered distinct pairs of exp(-t ||u - v||^2) on unit-normalized rows."""
    U = unit_rows(features)
    if U.shape[0] < 2:
        raise ValueError("uniformity needs at least two vectors")
    sq = pdist(U, metric="sqeuclidean")
    return float(logsumexp(-t * sq) - np.log(sq.size))


def svd_collapse_metrics(features: np.ndarray) -> CollapseSpectrum:
    """Spectrum, normalized spectrum and cumulative explained variance of row-normalized features."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError(f"need an (N, d) matrix with N >= 1, got shape {features.shape}")
    sigma = np.linalg.svd(unit_rows(features), compute_uv=False)
    normalized = sigma / sigma[0] if sigma[0] > EPS else np.zeros_like(sigma)
    cumulative = np.cumsum(sigma) / max(sigma.sum(), EPS)
    return CollapseSpectrum(sigma, normalized, cumulative)


def cev_levels(dim: int) -> List[int]:
    """1, 2, 4, ... up to and including ``dim``."""
    levels, k = [], 1
    while k < dim:
        levels.append(k)
        k *= 2
    levels.append(dim)
    return levels


def collapse_row(features: np.ndarray) -> Dict[str, float]:
    spectrum = svd_collapse_metrics(features)
    return {f"cev_at_{k}": spectrum.cev_at(k) for k in cev_levels(features.shape[1])}
