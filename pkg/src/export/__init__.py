"""
Run artifacts: binary checkpoints and CSV logs.
"""

from .checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    CheckpointError,
    capture_state,
    load_checkpoint,
    restore_state,
    save_checkpoint,
)
from .run_logger import RunLogger, format_float
