"""
ReplayBuffer: Abstract base class for replay policies.

Entries are stored as parallel arrays in buffer order:

  uids    (n,)      stream ids of the stored samples
  inputs  (n, d)    raw inputs x
  losses  (n,)      ℓ^M (shifted SimSiam loss, nonnegative)
  mean_features (n, d_f)  z̄^M
  mean_angles   (n,)      θ̄^M
  counts  (n,)      extraction counts e^M

Subclasses decide where inserted samples go (``insert``) and how entries are
drawn (``extraction_probabilities``).
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class BufferEntry:
    uid: int
    x: np.ndarray
    loss: float
    mean_feature: np.ndarray
    mean_angle: float
    extraction_count: int


@dataclass
class Extraction:
    uids: np.ndarray
    inputs: np.ndarray
    short: bool = False

    def __len__(self) -> int:
        return self.uids.size


@dataclass
class TopK:
    """Frozen snapshot of buffer statistics for the Overlap loss."""

    uids: np.ndarray
    losses: np.ndarray
    mean_features: np.ndarray
    mean_angles: np.ndarray

    def __len__(self) -> int:
        return self.uids.size


def min_max(values: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant vector maps to zeros."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


class ReplayBuffer(ABC):
    """
    Abstract base class for replay buffers.

    Args:
        capacity: Maximum number of stored entries (|M|).
        seed: Seed of the buffer's own random generator.
        eta: EMA decay used by ``update_stats``.
        use_ema: When False, ``update_stats`` overwrites with the fresh values.
    """

    policy_name = "base"
    tracks_stats = False

    def __init__(self, capacity: int, seed: int = 0, eta: float = 0.5, use_ema: bool = True):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {eta}")
        self.capacity = int(capacity)
        self.eta = float(eta)
        self.use_ema = use_ema
        self.rng = np.random.default_rng(seed)
        self.seen = 0

        self.uids = np.zeros(0, dtype=np.int64)
        self.inputs: Optional[np.ndarray] = None
        self.losses = np.zeros(0, dtype=np.float64)
        self.mean_features: Optional[np.ndarray] = None
        self.mean_angles = np.zeros(0, dtype=np.float64)
        self.counts = np.zeros(0, dtype=np.int64)
        self._index: Dict[int, int] = {}

    # -- basic accessors ----------------------------------------------------

    def __len__(self) -> int:
        return self.uids.size

    def __contains__(self, uid: int) -> bool:
        return int(uid) in self._index

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity

    def entry(self, uid: int) -> BufferEntry:
        i = self._position(uid)
        return BufferEntry(int(self.uids[i]), self.inputs[i].copy(), float(self.losses[i]),
                           self.mean_features[i].copy(), float(self.mean_angles[i]),
                           int(self.counts[i]))

    def _position(self, uid: int) -> int:
        try:
            return self._index[int(uid)]
        except KeyError:
            raise KeyError(f"unknown buffer id {uid}") from None

    def _reindex(self) -> None:
        self._index = {int(u): i for i, u in enumerate(self.uids)}

    # -- storage primitives -------------------------------------------------

    def _prepare(self, X: np.ndarray, feature_dim: int) -> None:
        if self.inputs is None:
            self.inputs = np.zeros((0, X.shape[1]), dtype=X.dtype)
            self.mean_features = np.zeros((0, feature_dim), dtype=np.float64)
        elif X.shape[1] != self.inputs.shape[1]:
            raise ValueError(f"sample dimension {X.shape[1]} does not match "
                             f"buffer dimension {self.inputs.shape[1]}")

    @staticmethod
    def _columns(uids, X, losses, mean_features, mean_angles):
        uids = np.asarray(uids, dtype=np.int64)
        X = np.atleast_2d(np.asarray(X))
        n = uids.size
        losses = np.zeros(n) if losses is None else np.asarray(losses, dtype=np.float64)
        mean_angles = (np.zeros(n) if mean_angles is None
                       else np.asarray(mean_angles, dtype=np.float64))
        if mean_features is None:
            mean_features = np.zeros((n, 0))
        mean_features = np.asarray(mean_features, dtype=np.float64)
        if X.shape[0] != n or losses.shape != (n,) or mean_angles.shape != (n,):
            raise ValueError("insert columns have inconsistent lengths")
        return uids, X, losses, mean_features, mean_angles

    def _fit_features(self, mean_features: np.ndarray) -> np.ndarray:
        width = self.mean_features.shape[1]
        if mean_features.shape[1] == width:
            return mean_features
        if mean_features.shape[1] == 0:
            return np.zeros((mean_features.shape[0], width))
        if width == 0:
            # entries stored without statistics adopt the first real width
            self.mean_features = np.zeros((len(self), mean_features.shape[1]))
            return mean_features
        raise ValueError(f"feature dimension {mean_features.shape[1]} does not match {width}")

    def _append(self, uids, X, losses, mean_features, mean_angles) -> None:
        mean_features = self._fit_features(mean_features)
        self.uids = np.concatenate([self.uids, uids])
        self.inputs = np.concatenate([self.inputs, X.astype(self.inputs.dtype, copy=False)])
        self.losses = np.concatenate([self.losses, losses])
        self.mean_features = np.concatenate([self.mean_features, mean_features])
        self.mean_angles = np.concatenate([self.mean_angles, mean_angles])
        self.counts = np.concatenate([self.counts, np.zeros(uids.size, dtype=np.int64)])
        self._reindex()

    def _replace(self, slot: int, uid, x, loss, mean_feature, mean_angle) -> None:
        if mean_feature.shape[0] != self.mean_features.shape[1]:
            mean_feature = np.zeros(self.mean_features.shape[1])
        self._index.pop(int(self.uids[slot]), None)
        self.uids[slot] = uid
        self.inputs[slot] = x
        self.losses[slot] = loss
        self.mean_features[slot] = mean_feature
        self.mean_angles[slot] = mean_angle
        self.counts[slot] = 0
        self._index[int(uid)] = slot

    def _keep(self, mask: np.ndarray) -> None:
        self.uids = self.uids[mask]
        self.inputs = self.inputs[mask]
        self.losses = self.losses[mask]
        self.mean_features = self.mean_features[mask]
        self.mean_angles = self.mean_angles[mask]
        self.counts = self.counts[mask]
        self._reindex()

    # -- policy interface ---------------------------------------------------

    def insert(self, uids: Sequence[int], X: np.ndarray, losses=None, mean_features=None,
               mean_angles=None) -> None:
        """
        Offer new stream samples to the buffer.

        Args:
            uids: Stream ids, one per row of ``X``.
            X: Inputs (n, d).
            losses, mean_features, mean_angles: Fresh statistics of the
                samples; stored as the entries' initial values.
        """
        cols = self._columns(uids, X, losses, mean_features, mean_angles)
        self._prepare(cols[1], cols[3].shape[1])
        self.seen += cols[0].size
        self._insert(*cols)

    @abstractmethod
    def _insert(self, uids, X, losses, mean_features, mean_angles) -> None:
        """Policy-specific placement; ``self.seen`` already counts the new samples."""

    def extraction_probabilities(self) -> np.ndarray:
        """Probability of each stored entry being drawn first."""
        n = len(self)
        return np.full(n, 1.0 / n) if n else np.zeros(0)

    def draw_indices(self, count: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """
        Sample ``count`` buffer positions without replacement, sequentially
        proportional to ``extraction_probabilities``. Does not touch counts.
        """
        rng = rng if rng is not None else self.rng
        n = len(self)
        count = min(count, n)
        if count <= 0:
            return np.zeros(0, dtype=np.int64)
        probs = self.extraction_probabilities()
        if np.allclose(probs, probs[0]):
            return rng.permutation(n)[:count]
        # Gumbel top-k equals successive sampling without replacement.
        keys = np.log(probs) + rng.gumbel(size=n)
        return np.argsort(-keys, kind="stable")[:count]

    def extract(self, count: int, mark: bool = True) -> Extraction:
        """
        Draw ``count`` entries (all of them, flagged short, if fewer are stored).

        With ``mark=False`` the draw leaves extraction counts alone; call
        ``mark_extracted`` once the entries are actually trained on.
        """
        short = count > len(self)
        if short:
            logger.debug(f"{self.policy_name}: requested {count}, buffer holds {len(self)}")
        idx = self.draw_indices(count)
        if mark:
            self._on_extracted(idx)
        inputs = (self.inputs[idx].copy() if self.inputs is not None
                  else np.zeros((0, 0)))
        return Extraction(self.uids[idx].copy(), inputs, short)

    def mark_extracted(self, uids: Sequence[int]) -> None:
        """Count a replay of the listed entries."""
        idx = np.array([self._position(u) for u in uids], dtype=np.int64)
        if idx.size:
            self._on_extracted(idx)

    def _on_extracted(self, idx: np.ndarray) -> None:
        pass

    def update_stats(self, uids: Sequence[int], losses: np.ndarray,
                     mean_features: Optional[np.ndarray] = None,
                     mean_angles: Optional[np.ndarray] = None,
                     eta: Optional[float] = None) -> None:
        """
        s <- eta * s_old + (1 - eta) * s_new for each listed entry.

        Raises:
            KeyError: An id is not in the buffer.
        """
        eta = self.eta if eta is None else eta
        if not self.use_ema:
            eta = 0.0
        idx = np.array([self._position(u) for u in uids], dtype=np.int64)
        if idx.size == 0:
            return
        self.losses[idx] = eta * self.losses[idx] + (1 - eta) * np.asarray(losses, dtype=np.float64)
        if mean_features is not None:
            mean_features = self._fit_features(np.atleast_2d(
                np.asarray(mean_features, dtype=np.float64)))
            self.mean_features[idx] = eta * self.mean_features[idx] + (1 - eta) * mean_features
        if mean_angles is not None:
            self.mean_angles[idx] = (eta * self.mean_angles[idx]
                                     + (1 - eta) * np.asarray(mean_angles, dtype=np.float64))

    def topk_by_loss(self, k: int, exclude: Sequence[int] = ()) -> TopK:
        """The ``k`` highest-loss entries not in ``exclude`` (ties: buffer order)."""
        excluded = np.isin(self.uids, np.asarray(list(exclude), dtype=np.int64))
        candidates = np.flatnonzero(~excluded)
        order = candidates[np.argsort(-self.losses[candidates], kind="stable")]
        pick = order[:max(k, 0)]
        width = self.mean_features.shape[1] if self.mean_features is not None else 0
        features = (self.mean_features[pick].copy() if self.mean_features is not None
                    else np.zeros((0, width)))
        return TopK(self.uids[pick].copy(), self.losses[pick].copy(), features,
                    self.mean_angles[pick].copy())

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "policy": self.policy_name,
            "seen": self.seen,
            "uids": self.uids.copy(),
            "inputs": None if self.inputs is None else self.inputs.copy(),
            "losses": self.losses.copy(),
            "mean_features": None if self.mean_features is None else self.mean_features.copy(),
            "mean_angles": self.mean_angles.copy(),
            "counts": self.counts.copy(),
            "rng": self.rng.bit_generator.state,
        }

    def load_state_dict(self, state: dict) -> None:
        if state["policy"] != self.policy_name:
            raise ValueError(f"checkpoint buffer policy '{state['policy']}' "
                             f"does not match '{self.policy_name}'")
        self.seen = int(state["seen"])
        self.uids = np.asarray(state["uids"], dtype=np.int64).copy()
        self.inputs = None if state["inputs"] is None else np.array(state["inputs"])
        self.losses = np.asarray(state["losses"], dtype=np.float64).copy()
        self.mean_features = (None if state["mean_features"] is None
                              else np.asarray(state["mean_features"], dtype=np.float64).copy())
        self.mean_angles = np.asarray(state["mean_angles"], dtype=np.float64).copy()
        self.counts = np.asarray(state["counts"], dtype=np.int64).copy()
        self.rng.bit_generator.state = state["rng"]
        self._reindex()
