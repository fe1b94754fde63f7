"""Central finite-difference verification of ``backward``."""

import logging
from typing import Iterable, Optional

import numpy as np

from .graph import ValueGraph, backward, forward

logger = logging.getLogger(__name__)


def grad_check(graph: ValueGraph, loss_node: int, step: float = 1e-4,
               leaves: Optional[Iterable[int]] = None) -> float:
    """
    Compare analytic gradients against central differences.

    Every coordinate of every leaf that requires gradients (or only the
    given ``leaves``) is perturbed by ``±step``; the graph is re-evaluated
    for each perturbation and restored afterwards.

    Returns:
        max |analytic - numeric| / max(1, |analytic|, |numeric|) over all
        checked coordinates.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")

    forward(graph)
    backward(graph, loss_node)
    if leaves is None:
        leaves = [n.id for n in graph.nodes if n.op == "leaf" and n.requires_grad]
    analytic = {i: graph.nodes[i].grad.copy() for i in leaves}

    worst = 0.0
    for leaf_id in analytic:
        value = graph.nodes[leaf_id].value
        for idx in np.ndindex(value.shape):
            original = value[idx]
            value[idx] = original + step
            forward(graph)
            f_plus = float(graph.value(loss_node))
            value[idx] = original - step
            forward(graph)
            f_minus = float(graph.value(loss_node))
            value[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[leaf_id][idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)

    forward(graph)
    backward(graph, loss_node)
    logger.debug("grad_check over %d leaves: max relative error %.3e", len(analytic), worst)
    return worst
