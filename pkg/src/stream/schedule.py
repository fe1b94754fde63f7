"""
Class-incremental, single-pass stream schedule.

Classes are split contiguously into tasks; each task's samples are shuffled
with the schedule seed and chunked into stream minibatches of ``b_s``
(the last chunk may be smaller). Every dataset index is emitted once.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterator, List

import numpy as np

from .dataset import LabeledDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StreamBatch:
    task: int
    position: int
    indices: np.ndarray


@dataclass
class StreamSchedule:
    tasks: List[np.ndarray]
    task_classes: List[np.ndarray]
    stream_batch_size: int
    passes_per_batch: int
    rng_seed: int
    batches: List[StreamBatch] = field(default_factory=list)

    def __post_init__(self):
        if not self.batches:
            position = 0
            for t, order in enumerate(self.tasks):
                for start in range(0, order.size, self.stream_batch_size):
                    chunk = order[start:start + self.stream_batch_size]
                    self.batches.append(StreamBatch(t, position, chunk))
                    position += 1

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def num_steps(self) -> int:
        return len(self.batches) * self.passes_per_batch

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self) -> Iterator[StreamBatch]:
        return iter(self.batches)

    def task_end_positions(self) -> List[int]:
        """Position of the last minibatch of every task."""
        ends = {}
        for b in self.batches:
            ends[b.task] = b.position
        return [ends[t] for t in sorted(ends)]


def build_schedule(dataset: LabeledDataset, num_tasks: int, b_s: int, n_p: int, seed: int,
                   shuffle_class_order: bool = False) -> StreamSchedule:
    """
    Build the one-pass class-incremental schedule.

    Raises:
        ValueError: num_tasks exceeds the number of classes, or a size is
            not positive.
    """
    if b_s < 1 or n_p < 1 or num_tasks < 1:
        raise ValueError("num_tasks, b_s and n_p must be positive")
    if num_tasks > dataset.num_classes:
        raise ValueError(f"num_tasks={num_tasks} exceeds num_classes={dataset.num_classes}")

    rng = np.random.default_rng(seed)
    classes = np.arange(dataset.num_classes)
    if shuffle_class_order:
        classes = rng.permutation(classes)

    tasks, task_classes = [], []
    for class_group in np.array_split(classes, num_tasks):
        members = np.flatnonzero(np.isin(dataset.labels, class_group))
        tasks.append(members[rng.permutation(members.size)])
        task_classes.append(np.sort(class_group))

    schedule = StreamSchedule(tasks, task_classes, b_s, n_p, seed)
    logger.info(f"Schedule: {num_tasks} tasks, {len(schedule)} stream minibatches, "
                f"{schedule.num_steps} steps")
    return schedule

