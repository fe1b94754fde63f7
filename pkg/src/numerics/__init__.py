"""Tensor arithmetic with reverse-mode differentiation and SGD."""

from .geometry import (
    angle,
    angle_matrix,
    cosine,
    cosine_matrix,
    mean_pairwise_angle,
    unit_rows,
)
from .gradcheck import grad_check
from .graph import (
    ARCCOS_CLAMP,
    COSINE_EPS,
    OPS,
    GraphError,
    Node,
    NonFiniteError,
    ShapeMismatchError,
    UnboundInputError,
    ValueGraph,
    backward,
    forward,
)
from .optim import OptimizerState, sgd_update

__all__ = [
    "ARCCOS_CLAMP",
    "COSINE_EPS",
    "OPS",
    "GraphError",
    "Node",
    "NonFiniteError",
    "ShapeMismatchError",
    "UnboundInputError",
    "ValueGraph",
    "backward",
    "forward",
    "grad_check",
    "OptimizerState",
    "sgd_update",
    "angle",
    "angle_matrix",
    "cosine",
    "cosine_matrix",
    "mean_pairwise_angle",
    "unit_rows",
]
