"""Replay buffer policies and the policy registry."""

import inspect
import logging
from typing import Any, Dict, Optional

from .base_buffer import BufferEntry, Extraction, ReplayBuffer, TopK, min_max, softmax
from .deviation_aware import DeviationAwareBuffer
from .fifo import FIFOBuffer
from .lars import LARSBuffer
from .per import PERBuffer
from .reservoir import ReservoirBuffer

logger = logging.getLogger(__name__)

# Policy lookup: ``policy`` key in a run config -> buffer class
POLICIES = {
    "fifo": FIFOBuffer,
    "reservoir": ReservoirBuffer,
    "lars": LARSBuffer,
    "per": PERBuffer,
    "deviation_aware": DeviationAwareBuffer,
}


def build_buffer(policy: str, capacity: int, seed: int = 0, eta: float = 0.5,
                 policy_args: Optional[Dict[str, Any]] = None) -> ReplayBuffer:
    """
    Instantiate a registered policy.

    ``policy_args`` are passed only when the buffer's constructor declares
    them, so one shared argument set can serve every policy.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown replay policy '{policy}'; choose from {sorted(POLICIES)}")
    cls = POLICIES[policy]
    accepted = inspect.signature(cls.__init__).parameters
    args = {k: v for k, v in (policy_args or {}).items() if k in accepted}
    ignored = set(policy_args or {}) - set(args)
    if ignored:
        logger.debug(f"{policy}: ignoring arguments {sorted(ignored)}")
    return cls(capacity, seed=seed, eta=eta, **args)


__all__ = [
    "BufferEntry",
    "Extraction",
    "ReplayBuffer",
    "TopK",
    "min_max",
    "softmax",
    "DeviationAwareBuffer",
    "FIFOBuffer",
    "LARSBuffer",
    "PERBuffer",
    "ReservoirBuffer",
    "POLICIES",
    "build_buffer",
]
