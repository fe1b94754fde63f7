"""SGD with momentum and L2 weight decay."""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **kwargs) -> "OptimizerState":
        state = cls(**kwargs)
        state.buffers = {name: np.zeros_like(p) for name, p in params.items()}
        return state


def sgd_update(params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
               state: OptimizerState) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """
    v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.

    Parameters and buffers are updated in place and also returned.
    Parameters without a gradient entry are left untouched.
    """
    for name, param in params.items():
        if name not in grads:
            continue
        grad = grads[name]
        if grad.shape != param.shape:
            raise ValueError(f"gradient for '{name}' has shape {grad.shape}, "
                             f"parameter has {param.shape}")
        buf = state.buffers.get(name)
        if buf is None:
            buf = state.buffers[name] = np.zeros_like(param)
        buf *= state.momentum
        buf += grad + state.weight_decay * param
        param -= state.learning_rate * buf
    return params, state
