"""
Loss-aware reservoir: reservoir acceptance, but an accepted sample takes
the slot of the current lowest-loss entry instead of a random one.
"""

import numpy as np

from .reservoir import ReservoirBuffer


class LARSBuffer(ReservoirBuffer):
    policy_name = "lars"
    tracks_stats = True

    def _insert(self, uids, X, losses, mean_features, mean_angles) -> None:
        first_t = self.seen - uids.size + 1
        for row in range(uids.size):
            if not self.full:
                self._append(uids[row:row + 1], X[row:row + 1], losses[row:row + 1],
                             mean_features[row:row + 1], mean_angles[row:row + 1])
                continue
            draw = self.rng.integers(0, first_t + row)
            if draw >= self.capacity:
                continue
            victim = int(np.argmin(self.losses))
            self._replace(victim, uids[row], X[row], losses[row], mean_features[row],
                          mean_angles[row])
