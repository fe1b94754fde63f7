"""
Prioritized replay: FIFO storage, extraction biased toward high loss.

Priorities are softmax(min-max-normalized ℓ^M), the mirror image of the
deviation-aware count rule.
"""

from .base_buffer import min_max, softmax
from .fifo import FIFOBuffer


class PERBuffer(FIFOBuffer):
    policy_name = "per"
    tracks_stats = True

    def extraction_probabilities(self):
        if len(self) == 0:
            return super().extraction_probabilities()
        return softmax(min_max(self.losses))
