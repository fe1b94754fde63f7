"""Training loop, Overlap loss and the experience-replay baseline."""

from .loop import (
    RunHooks,
    StepRecord,
    StreamStepError,
    TrainConfig,
    TrainerState,
    er_step,
    run_stream,
    solar_step,
)
from .overlap_loss import overlap_loss, overlap_loss_node

__all__ = [
    "RunHooks",
    "StepRecord",
    "StreamStepError",
    "TrainConfig",
    "TrainerState",
    "er_step",
    "run_stream",
    "solar_step",
    "overlap_loss",
    "overlap_loss_node",
]
