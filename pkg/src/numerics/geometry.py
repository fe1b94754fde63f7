"""
Cosine and angle helpers on plain arrays (no graph).

Angles use 2·atan2(|û − v̂|, |û + v̂|), which equals arccos(cos(u, v)) but
is exact for identical and antipodal directions where arccos of a rounded
cosine is not.
"""

import numpy as np

from .graph import COSINE_EPS, NORM_EPS

_CHUNK_ROWS = 128


def unit_rows(X: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Scale every vector along the last axis to unit norm; zero vectors stay zero."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    return X / np.maximum(norms, eps)


def cosine(a: np.ndarray, b: np.ndarray, eps: float = COSINE_EPS) -> np.ndarray:
    """Row-wise cosine similarity with a guarded denominator."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    return (a * b).sum(axis=-1) / np.maximum(denom, eps)


def cosine_matrix(A: np.ndarray, B: np.ndarray, eps: float = COSINE_EPS) -> np.ndarray:
    """All-pairs cosine similarity, shape (len(A), len(B))."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    na = np.linalg.norm(A, axis=-1)
    nb = np.linalg.norm(B, axis=-1)
    return (A @ B.T) / np.maximum(np.outer(na, nb), eps)


def angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise angle in [0, pi] between ``a`` and ``b``."""
    ua, ub = unit_rows(a), unit_rows(b)
    return 2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=-1),
                            np.linalg.norm(ua + ub, axis=-1))


def angle_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """All-pairs angles, shape (len(A), len(B)), evaluated in row chunks."""
    UA, UB = unit_rows(A), unit_rows(B)
    out = np.empty((UA.shape[0], UB.shape[0]))
    for start in range(0, UA.shape[0], _CHUNK_ROWS):
        block = UA[start:start + _CHUNK_ROWS, None, :]
        diff = np.linalg.norm(block - UB[None], axis=-1)
        summ = np.linalg.norm(block + UB[None], axis=-1)
        out[start:start + _CHUNK_ROWS] = 2.0 * np.arctan2(diff, summ)
    return out


def mean_pairwise_angle(views: np.ndarray, include_self_pairs: bool = True) -> np.ndarray:
    """
    Mean angle over ordered pairs of views.

    Args:
        views: (..., n, d) stacked view vectors.
        include_self_pairs: Average over n^2 pairs (self-pairs count as 0)
            instead of the n(n-1) distinct ordered pairs.
    """
    U = unit_rows(views)
    n = U.shape[-2]
    diff = np.linalg.norm(U[..., :, None, :] - U[..., None, :, :], axis=-1)
    summ = np.linalg.norm(U[..., :, None, :] + U[..., None, :, :], axis=-1)
    angles = 2.0 * np.arctan2(diff, summ)
    total = angles.sum(axis=(-2, -1))
    pairs = n * n if include_self_pairs else n * (n - 1)
    return total / pairs
