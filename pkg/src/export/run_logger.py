"""
CSV run artifacts.

One directory per run:
  steps.csv            one row per training step
  metrics.csv          latent metrics every N steps and at every task end
  accuracy.csv         linear-probe accuracy at every task end
  summary.csv          final and average accuracy (written at the end)
  resolved_config.txt  the effective configuration, key=value
  source_schema.json   what the data source produced (layout, dim, classes)

Column layouts are documented in docs/artifacts.md. Floats use 9
significant digits so files compare byte-for-byte between runs.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.9g"

STEP_COLUMNS = [
    "step", "task", "position", "pass", "batch_size", "stream_size", "buffer_size",
    "ssl_loss", "overlap_loss", "total_loss", "skipped",
]
METRIC_COLUMNS = ["checkpoint_step", "deviation_mean", "avg_overlap_count", "uniformity"]
SUMMARY_COLUMNS = ["run_id", "steps", "num_tasks", "final_accuracy", "average_accuracy"]

# column used to cut each file back on resume, and whether rows taken at the
# resume step itself survive (steps.csv indexes steps, the others count them)
_STEP_KEYS = {
    "steps.csv": ("step", False),
    "metrics.csv": ("checkpoint_step", True),
    "accuracy.csv": ("step", True),
}


def format_float(value: float) -> str:
    return FLOAT_FORMAT % value


def accuracy_columns(num_tasks: int) -> List[str]:
    return ["step", "task", "accuracy"] + [f"acc_task_{t}" for t in range(num_tasks)]


class RunLogger:
    """
    Appends rows to the run's CSV files.

    Step rows are buffered and flushed every ``flush_every`` rows, before any
    other file is written and on ``close``; the other files are written
    immediately.
    """

    def __init__(self, run_dir, num_tasks: int, flush_every: int = 200):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.num_tasks = num_tasks
        self.flush_every = flush_every
        self._pending: List[dict] = []

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def _append(self, name: str, rows: Sequence[dict], columns: Sequence[str]) -> None:
        if not rows:
            return
        target = self.path(name)
        df = pd.DataFrame(list(rows), columns=list(columns))
        df.to_csv(target, mode="a", header=not target.exists(), index=False,
                  float_format=format_float, na_rep="nan")

    # -- writers ------------------------------------------------------------

    def log_step(self, row: Dict[str, object]) -> None:
        self._pending.append(row)
        if len(self._pending) >= self.flush_every:
            self.flush()

    def log_metrics(self, step: int, task: int, metrics: Dict[str, float]) -> None:
        self.flush()
        row = {"checkpoint_step": step, "task": task, **metrics}
        extra = [k for k in metrics if k not in METRIC_COLUMNS]
        self._append("metrics.csv", [row], METRIC_COLUMNS + extra + ["task"])

    def log_accuracy(self, step: int, task: int, accuracy: float,
                     per_task: Sequence[float]) -> None:
        self.flush()
        row = {"step": step, "task": task, "accuracy": accuracy}
        row.update({f"acc_task_{t}": a for t, a in enumerate(per_task)})
        self._append("accuracy.csv", [row], accuracy_columns(self.num_tasks))
        logger.info(f"Probe after task {task} (step {step}): accuracy {accuracy:.4f}")

    def write_summary(self, run_id: str, steps: int, final: float, average: float) -> Path:
        self.flush()
        target = self.path("summary.csv")
        pd.DataFrame([{
            "run_id": run_id, "steps": steps, "num_tasks": self.num_tasks,
            "final_accuracy": final, "average_accuracy": average,
        }], columns=SUMMARY_COLUMNS).to_csv(target, index=False, float_format=format_float,
                                            na_rep="nan")
        return target

    def write_config(self, lines: Sequence[str]) -> Path:
        target = self.path("resolved_config.txt")
        target.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return target

    def write_schema(self, schema: Dict[str, str]) -> Path:
        target = self.path("source_schema.json")
        target.write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return target

    def flush(self) -> None:
        self._append("steps.csv", self._pending, STEP_COLUMNS)
        self._pending = []

    def close(self) -> None:
        self.flush()

    # -- resume -------------------------------------------------------------

    def truncate(self, step: int) -> None:
        """Cut every file back to what existed when the checkpoint at ``step`` was taken."""
        self._pending = []
        for name, (key, inclusive) in _STEP_KEYS.items():
            target = self.path(name)
            if not target.exists():
                continue
            # read as text so surviving rows are rewritten byte-for-byte
            df = pd.read_csv(target, dtype=str, keep_default_na=False)
            steps = df[key].astype(int)
            kept = df[steps <= step] if inclusive else df[steps < step]
            kept.to_csv(target, index=False)
            dropped = len(df) - len(kept)
            if dropped:
                logger.info(f"Resume: dropped {dropped} rows from {name} past step {step}")
        summary = self.path("summary.csv")
        if summary.exists():
            summary.unlink()


def read_optional_csv(path) -> Optional[pd.DataFrame]:
    path = Path(path)
    if not path.exists():
        logger.warning(f"Optional artifact missing: {path}")
        return None
    return pd.read_csv(path)
