"""Labelled sample containers shared by the stream sources."""

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    label: int


class LabeledDataset:
    """
    Struct-of-arrays dataset: ``X`` is (N, d) float, ``labels`` is (N,) int.

    ``image_shape`` is set for image data so the augmentation pipeline can
    reshape the flattened rows.
    """

    def __init__(self, X: np.ndarray, labels: np.ndarray, num_classes: int,
                 image_shape: Sequence[int] = ()):
        X = np.asarray(X)
        labels = np.asarray(labels, dtype=np.int64)
        if X.ndim != 2 or labels.shape != (X.shape[0],):
            raise ValueError(f"inconsistent dataset shapes {X.shape} / {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
        if not np.all(np.isfinite(X)):
            raise ValueError("dataset contains non-finite values")
        self.X = X
        self.labels = labels
        self.num_classes = int(num_classes)
        self.image_shape = tuple(image_shape)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, index: int) -> LabeledSample:
        return LabeledSample(x=self.X[index], label=int(self.labels[index]))

    def __iter__(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def astype(self, dtype) -> "LabeledDataset":
        return LabeledDataset(self.X.astype(dtype), self.labels, self.num_classes,
                              self.image_shape)
