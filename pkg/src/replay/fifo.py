"""FIFO buffer: keeps the most recent ``capacity`` samples in arrival order."""

import numpy as np

from .base_buffer import ReplayBuffer


class FIFOBuffer(ReplayBuffer):
    policy_name = "fifo"

    def _insert(self, uids, X, losses, mean_features, mean_angles) -> None:
        self._append(uids, X, losses, mean_features, mean_angles)
        excess = len(self) - self.capacity
        if excess > 0:
            keep = np.ones(len(self), dtype=bool)
            keep[:excess] = False
            self._keep(keep)
