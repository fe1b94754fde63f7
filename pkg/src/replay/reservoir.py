"""
Reservoir buffer.

While not full every sample is appended. Afterwards the t-th sample
(1-based) draws i uniformly from [0, t) and replaces slot i when i < capacity,
so every stream sample ends up stored with probability capacity / t.
"""

import numpy as np

from .base_buffer import ReplayBuffer


class ReservoirBuffer(ReplayBuffer):
    policy_name = "reservoir"

    def _acceptance_slots(self, first_t: int, n: int) -> np.ndarray:
        """Slot draws for stream positions first_t .. first_t + n - 1 (1-based)."""
        positions = np.arange(first_t, first_t + n)
        return self.rng.integers(0, positions)

    def _insert(self, uids, X, losses, mean_features, mean_angles) -> None:
        n = uids.size
        first_t = self.seen - n + 1

        room = max(self.capacity - len(self), 0)
        if room:
            head = slice(0, min(room, n))
            self._append(uids[head], X[head], losses[head], mean_features[head],
                         mean_angles[head])
        rest = np.arange(min(room, n), n)
        if rest.size == 0:
            return

        slots = self._acceptance_slots(first_t + rest[0], rest.size)
        accepted = slots < self.capacity
        rows, slots = rest[accepted], slots[accepted]
        if rows.size == 0:
            return
        # Later samples overwrite earlier ones aimed at the same slot.
        rev_slots = slots[::-1]
        _, first_in_rev = np.unique(rev_slots, return_index=True)
        winners = rows[::-1][first_in_rev]
        targets = rev_slots[first_in_rev]
        for slot, row in zip(targets, winners):
            self._replace(int(slot), uids[row], X[row], losses[row], mean_features[row],
                          mean_angles[row])
