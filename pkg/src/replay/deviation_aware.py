"""
Deviation-aware buffer.

Insert:  append every new sample with its fresh statistics; on overflow
         drop the lowest-loss entries (ascending-loss prefix, ties by
         buffer order) and keep the rest in order.
Extract: p = softmax(-ē) where ē is the min-max normalized extraction
         count; drawn without replacement, counts incremented.

``extraction_criterion`` switches the draw to loss-priority ("loss") or
uniform ("random") sampling.
"""

import logging

import numpy as np

from .base_buffer import ReplayBuffer, min_max, softmax

logger = logging.getLogger(__name__)

CRITERIA = ("count", "loss", "random")


class DeviationAwareBuffer(ReplayBuffer):
    policy_name = "deviation_aware"
    tracks_stats = True

    def __init__(self, capacity: int, seed: int = 0, eta: float = 0.5, use_ema: bool = True,
                 extraction_criterion: str = "count"):
        super().__init__(capacity, seed=seed, eta=eta, use_ema=use_ema)
        if extraction_criterion not in CRITERIA:
            raise ValueError(f"extraction_criterion must be one of {CRITERIA}, "
                             f"got '{extraction_criterion}'")
        self.extraction_criterion = extraction_criterion

    def _insert(self, uids, X, losses, mean_features, mean_angles) -> None:
        self._append(uids, X, losses, mean_features, mean_angles)
        excess = len(self) - self.capacity
        if excess <= 0:
            return
        evict = np.argsort(self.losses, kind="stable")[:excess]
        keep = np.ones(len(self), dtype=bool)
        keep[evict] = False
        logger.debug(f"evicting {excess} lowest-loss entries")
        self._keep(keep)

    def extraction_probabilities(self) -> np.ndarray:
        if len(self) == 0 or self.extraction_criterion == "random":
            return super().extraction_probabilities()
        if self.extraction_criterion == "loss":
            return softmax(min_max(self.losses))
        return softmax(-min_max(self.counts))

    def _on_extracted(self, idx: np.ndarray) -> None:
        self.counts[idx] += 1
