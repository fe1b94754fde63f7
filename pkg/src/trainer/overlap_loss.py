"""
Overlap loss between the current minibatch and the top-K buffer entries.

  L_ov = (1/b) Σ_i (1/K) Σ_k max(0, θ̄_i + θ̄_k − angle(z̄_i, z̄_k))

Minibatch-side z̄_i, θ̄_i are live graph nodes; buffer-side statistics enter
as constants, so no gradient reaches them.
"""

import numpy as np

from numerics import ValueGraph, unit_rows
from replay import TopK


def overlap_loss_node(graph: ValueGraph, mean_feature: int, mean_angle: int, bank: TopK) -> int:
    """Scalar Overlap-loss node; a constant 0 when the bank is empty."""
    zbar = graph.value(mean_feature)
    dtype = zbar.dtype
    if len(bank) == 0:
        return graph.constant(np.zeros((), dtype=dtype), name="overlap_loss")

    b = zbar.shape[0]
    bank_t = graph.constant(unit_rows(bank.mean_features).T.astype(dtype))
    bank_angles = graph.constant(bank.mean_angles[None, :].astype(dtype))

    cos = graph.matmul(graph.l2_normalize(mean_feature), bank_t)
    between = graph.arccos(cos)
    spread = graph.add(graph.reshape(mean_angle, (b, 1)), bank_angles)
    hinge = graph.relu(graph.sub(spread, between))
    return graph.mean(hinge, name="overlap_loss")


def overlap_loss(mean_features: np.ndarray, mean_angles: np.ndarray, bank: TopK) -> float:
    """Array-level Overlap loss (no gradients)."""
    graph = ValueGraph()
    z = graph.constant(np.asarray(mean_features, dtype=np.float64))
    t = graph.constant(np.asarray(mean_angles, dtype=np.float64))
    return float(graph.value(overlap_loss_node(graph, z, t, bank)))
