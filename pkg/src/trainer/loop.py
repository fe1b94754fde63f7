"""
Online continual SSL training loop.

Each stream minibatch is visited once and trained on for ``passes`` steps.
Pass 0 combines B_tot − |b_s| replayed samples with the stream batch; later
passes replay B_tot samples. After every step the buffer is updated: EMA
refresh for replayed entries, insertion for stream samples (pass 0 only).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from model import LOSS_SHIFT, SSLModel, latent_stat_nodes, pair_loss_node
from numerics import OptimizerState, ValueGraph, backward, sgd_update
from replay import ReplayBuffer
from stream import AugmentationConfig, LabeledDataset, StreamSchedule, augment_batch

from .overlap_loss import overlap_loss_node

logger = logging.getLogger(__name__)


class StreamStepError(RuntimeError):
    """A training step failed; carries its position in the stream."""

    def __init__(self, step: int, position: int, pass_index: int, cause: Exception):
        self.step = step
        self.position = position
        self.pass_index = pass_index
        super().__init__(f"step {step} (stream minibatch {position}, pass {pass_index}) "
                         f"failed: {cause}")


@dataclass(frozen=True)
class TrainConfig:
    total_batch_size: int = 32
    stream_batch_size: int = 10
    passes: int = 1
    overlap_weight: float = 1.0
    top_k: int = 32
    eta: float = 0.5
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    policy: str = "deviation_aware"
    buffer_size: int = 256
    mode: str = "solar"
    include_self_pairs: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.total_batch_size < self.stream_batch_size:
            raise ValueError("total_batch_size must be at least stream_batch_size")
        if self.overlap_weight < 0:
            raise ValueError("overlap_weight must be nonnegative")
        if self.top_k < 0:
            raise ValueError("top_k must be nonnegative")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.mode not in ("solar", "er"):
            raise ValueError(f"mode must be 'solar' or 'er', got '{self.mode}'")


@dataclass
class StepRecord:
    step: int
    task: int
    position: int
    pass_index: int
    batch_size: int
    stream_size: int
    buffer_size: int
    ssl_loss: float
    overlap_loss: float
    total_loss: float
    skipped: bool = False
    per_sample_losses: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def row(self) -> dict:
        return {
            "step": self.step,
            "task": self.task,
            "position": self.position,
            "pass": self.pass_index,
            "batch_size": self.batch_size,
            "stream_size": self.stream_size,
            "buffer_size": self.buffer_size,
            "ssl_loss": self.ssl_loss,
            "overlap_loss": self.overlap_loss,
            "total_loss": self.total_loss,
            "skipped": int(self.skipped),
        }


@dataclass
class TrainerState:
    """Everything a step mutates; checkpointed as a unit."""

    model: SSLModel
    optimizer: OptimizerState
    buffer: ReplayBuffer
    augmentation: AugmentationConfig
    rng: np.random.Generator
    step: int = 0
    image_shape: Tuple[int, ...] = (3, 32, 32)


StreamBatch = Optional[Tuple[np.ndarray, np.ndarray]]


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def _assemble(buffer: ReplayBuffer, stream: StreamBatch, pass_index: int,
              total: int) -> Tuple[np.ndarray, np.ndarray, int]:
    if pass_index == 0 and stream is not None and stream[0].size:
        stream_uids, stream_x = stream
        replay = buffer.extract(total - stream_uids.size, mark=False)
        if len(replay):
            uids = np.concatenate([replay.uids, stream_uids])
            X = np.concatenate([replay.inputs.astype(stream_x.dtype, copy=False), stream_x])
        else:
            uids, X = stream_uids, stream_x
        return uids, X, stream_uids.size
    replay = buffer.extract(total, mark=False)
    return replay.uids, replay.inputs, 0


def _skipped(state: TrainerState, task: int, position: int, pass_index: int,
             batch_size: int) -> StepRecord:
    logger.warning(f"step {state.step}: batch of {batch_size} samples is too small; skipped")
    return StepRecord(state.step, task, position, pass_index, batch_size, 0,
                      len(state.buffer), 0.0, 0.0, 0.0, skipped=True)


def _train_step(state: TrainerState, stream: StreamBatch, pass_index: int, cfg: TrainConfig,
                use_overlap: bool, refresh_stats: bool, task: int, position: int) -> StepRecord:
    model, buffer = state.model, state.buffer
    uids, X, n_stream = _assemble(buffer, stream, pass_index, cfg.total_batch_size)
    if uids.size < 2:
        record = _skipped(state, task, position, pass_index, uids.size)
        if n_stream:
            buffer.insert(uids, X)
        return record
    # only a step that trains counts as a replay
    buffer.mark_extracted(uids[:uids.size - n_stream])

    view1 = augment_batch(X, state.augmentation, state.rng, state.image_shape)
    view2 = augment_batch(X, state.augmentation, state.rng, state.image_shape)
    model.train()
    fwd = model.forward_views(view1, view2, update_running=False)
    graph: ValueGraph = fwd.graph

    losses = pair_loss_node(graph, *fwd.predictions, *fwd.projections)
    ssl = graph.mean(losses, name="ssl_loss")
    zbar, theta = latent_stat_nodes(graph, *fwd.features, cfg.include_self_pairs)

    overlap_value = 0.0
    total = ssl
    if use_overlap and cfg.overlap_weight > 0 and cfg.top_k > 0:
        bank = buffer.topk_by_loss(cfg.top_k, exclude=uids)
        if len(bank):
            ov = overlap_loss_node(graph, zbar, theta, bank)
            overlap_value = float(graph.value(ov))
            total = graph.add(ssl, graph.scale(ov, cfg.overlap_weight), name="total_loss")

    grads = backward(graph, total)
    sgd_update(model.params, grads, state.optimizer)
    model.commit_batch_stats(graph, fwd.bn_nodes)

    shifted = graph.value(losses).astype(np.float64) + LOSS_SHIFT
    means = graph.value(zbar).astype(np.float64)
    angles = graph.value(theta).astype(np.float64)
    n_replay = uids.size - n_stream
    if refresh_stats and n_replay:
        buffer.update_stats(uids[:n_replay], shifted[:n_replay], means[:n_replay],
                            angles[:n_replay], eta=cfg.eta)
    if n_stream:
        buffer.insert(uids[n_replay:], X[n_replay:], shifted[n_replay:], means[n_replay:],
                      angles[n_replay:])

    return StepRecord(
        step=state.step, task=task, position=position, pass_index=pass_index,
        batch_size=uids.size, stream_size=n_stream, buffer_size=len(buffer),
        ssl_loss=float(graph.value(ssl)), overlap_loss=overlap_value,
        total_loss=float(graph.value(total)), per_sample_losses=shifted - LOSS_SHIFT,
    )


def solar_step(state: TrainerState, stream: StreamBatch, pass_index: int, cfg: TrainConfig,
               task: int = 0, position: int = 0) -> StepRecord:
    """One step of the SSL + ω·Overlap objective with full buffer statistics upkeep."""
    return _train_step(state, stream, pass_index, cfg, use_overlap=True, refresh_stats=True,
                       task=task, position=position)


def er_step(state: TrainerState, stream: StreamBatch, cfg: TrainConfig,
            pass_index: int = 0, task: int = 0, position: int = 0) -> StepRecord:
    """Plain experience replay: SSL loss only; statistics refreshed only for policies using them."""
    return _train_step(state, stream, pass_index, cfg, use_overlap=False,
                       refresh_stats=state.buffer.tracks_stats, task=task, position=position)


# ---------------------------------------------------------------------------
# Stream driver
# ---------------------------------------------------------------------------

StepHook = Callable[[StepRecord, TrainerState], None]
TaskHook = Callable[[int, TrainerState], None]


@dataclass
class RunHooks:
    on_step: List[StepHook] = field(default_factory=list)
    on_task_end: List[TaskHook] = field(default_factory=list)


def run_stream(state: TrainerState, dataset: LabeledDataset, schedule: StreamSchedule,
               cfg: TrainConfig, hooks: Optional[RunHooks] = None, start_step: int = 0,
               progress: bool = True) -> List[StepRecord]:
    """
    Visit every stream minibatch once, ``schedule.passes_per_batch`` steps each.

    Steps before ``start_step`` are skipped without side effects (the state is
    expected to come from a checkpoint taken after that many steps). Task-end
    hooks fire before step hooks of the task's last step.

    Raises:
        StreamStepError: wraps any failure with its stream position.
    """
    hooks = hooks or RunHooks()
    records: List[StepRecord] = []
    last_position = dict(enumerate(schedule.task_end_positions()))

    state.step = start_step
    bar = tqdm(total=schedule.num_steps, initial=start_step, disable=not progress,
               desc=f"{cfg.mode}/{cfg.policy}", unit="step")
    step = 0
    for batch in schedule:
        stream = (batch.indices.copy(), dataset.X[batch.indices])
        for p in range(schedule.passes_per_batch):
            if step < start_step:
                step += 1
                continue
            try:
                if cfg.mode == "solar":
                    record = solar_step(state, stream, p, cfg, task=batch.task,
                                        position=batch.position)
                else:
                    record = er_step(state, stream, cfg, pass_index=p, task=batch.task,
                                     position=batch.position)
            except Exception as e:
                raise StreamStepError(step, batch.position, p, e) from e
            step += 1
            state.step = step
            records.append(record)

            if (batch.position == last_position[batch.task]
                    and p == schedule.passes_per_batch - 1):
                logger.info(f"Task {batch.task} finished at step {step}")
                for hook in hooks.on_task_end:
                    hook(batch.task, state)
            for hook in hooks.on_step:
                hook(record, state)
            bar.update(1)
    bar.close()
    return records
