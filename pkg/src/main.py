"""
SOLAR lab - online continual self-supervised learning experiments

Subcommands:
  run      train over a class-incremental stream, writing CSV logs and checkpoints
  report   summarize one run directory, or every run below a directory
  probe    linear-probe a checkpoint
  metrics  latent metrics (Deviation, Overlap, uniformity, CEV) of a checkpoint

Usage:
    python src/main.py run config/runs/solar.conf
    python src/main.py run config/runs/solar.conf --resume runs/solar/checkpoints/step_00000100.ckpt
    python src/main.py report runs/
    python src/main.py probe runs/solar/final.ckpt config/runs/solar.conf
    python src/main.py metrics runs/solar/final.ckpt config/runs/solar.conf
    python src/main.py --log-level DEBUG run config/runs/fifo.conf
"""

import argparse
import inspect
import json
import logging
import sys
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

sys.path.insert(0, str(Path(__file__).parent))

from config_loader import ConfigError, ExperimentConfig
from export import (
    CheckpointError,
    RunLogger,
    capture_state,
    format_float,
    load_checkpoint,
    restore_state,
    save_checkpoint,
)
from export.run_logger import read_optional_csv
from metrics import latent_report
from model import SSLModel
from numerics import OptimizerState
from probe import probe_model, summarize
from replay import build_buffer
from stream import SOURCES, BaseSource, LabeledDataset, StreamSchedule, build_schedule
from trainer import RunHooks, StepRecord, StreamStepError, TrainerState, run_stream

logger = logging.getLogger(__name__)

LOG_FILE = "solar_run.log"
EXIT_CONFIG = 2


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def build_source(cfg: ExperimentConfig) -> BaseSource:
    source_cls = SOURCES[cfg.dataset]
    candidates = {
        "num_classes": cfg.num_classes,
        "per_class": cfg.per_class,
        "test_per_class": cfg.test_per_class,
        "dim": cfg.data_dim,
        "cluster_scale": cfg.cluster_scale,
        "seed": cfg.seed,
        "label_kind": cfg.cifar_labels,
        "download": cfg.cifar_download,
    }
    # Pass only the arguments the source declares
    accepted = inspect.signature(source_cls.__init__).parameters
    return source_cls(**{k: v for k, v in candidates.items() if k in accepted})


def load_datasets(cfg: ExperimentConfig,
                  source: Optional[BaseSource] = None) -> Tuple[LabeledDataset, LabeledDataset]:
    """Fetch (train, test) from the configured source in the model dtype."""
    if source is None:
        source = build_source(cfg)
    if not source.download_data():
        logger.warning(f"Download incomplete for {cfg.dataset}; trying existing files")
    data = source.load_data()
    return data["train"].astype(cfg.dtype), data["test"].astype(cfg.dtype)


def build_state(cfg: ExperimentConfig, train: LabeledDataset) -> TrainerState:
    model = SSLModel(cfg.model_config(train.dim))
    train_cfg = cfg.train_config()
    optimizer = OptimizerState.for_params(
        model.params, learning_rate=train_cfg.learning_rate, momentum=train_cfg.momentum,
        weight_decay=train_cfg.weight_decay,
    )
    buffer = build_buffer(cfg.policy, cfg.buffer_size, seed=cfg.seed + 1, eta=cfg.eta,
                          policy_args=cfg.policy_args())
    augmentation = cfg.augmentation_config()
    return TrainerState(
        model=model,
        optimizer=optimizer,
        buffer=buffer,
        augmentation=augmentation,
        rng=np.random.default_rng(augmentation.rng_seed),
        image_shape=tuple(train.image_shape) or (3, 32, 32),
    )


def build_stream(cfg: ExperimentConfig, train: LabeledDataset) -> StreamSchedule:
    return build_schedule(train, cfg.num_tasks, cfg.stream_batch_size, cfg.passes, cfg.seed,
                          shuffle_class_order=cfg.shuffle_class_order)


def checkpoint_path(run_dir: Path, step: int) -> Path:
    return run_dir / "checkpoints" / f"step_{step:08d}.ckpt"


def build_hooks(cfg: ExperimentConfig, run_logger: RunLogger, train: LabeledDataset,
                test: LabeledDataset, schedule: StreamSchedule,
                accuracies: List[float]) -> RunHooks:
    """
    Wire the run's side effects into the stream loop.

    Step hooks run in order: CSV row, periodic metrics, periodic checkpoint.
    Task-end hooks: metrics, then the linear probe. Metrics are written at
    most once per step.
    """
    hooks = RunHooks()
    last_metrics = {"step": -1}
    probe_cfg = cfg.probe_config()

    def write_metrics(task: int, state: TrainerState) -> None:
        if last_metrics["step"] == state.step:
            return
        row = latent_report(state.model, test, state.augmentation, seed=cfg.seed + 4,
                            n_aug=cfg.metrics_n_aug, subsample=cfg.metrics_subsample or None)
        run_logger.log_metrics(state.step, task, row)
        last_metrics["step"] = state.step

    def on_step_row(record: StepRecord, state: TrainerState) -> None:
        run_logger.log_step(record.row())

    def on_step_metrics(record: StepRecord, state: TrainerState) -> None:
        if cfg.metrics_every and state.step % cfg.metrics_every == 0:
            write_metrics(record.task, state)

    def on_step_checkpoint(record: StepRecord, state: TrainerState) -> None:
        if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            run_logger.flush()
            save_checkpoint(checkpoint_path(run_logger.run_dir, state.step), capture_state(state))

    def on_task_end_probe(task: int, state: TrainerState) -> None:
        result = probe_model(state.model, train, test, schedule.task_classes, probe_cfg)
        run_logger.log_accuracy(state.step, task, result.accuracy, result.per_task)
        accuracies.append(result.accuracy)

    hooks.on_step += [on_step_row, on_step_metrics, on_step_checkpoint]
    hooks.on_task_end.append(write_metrics)
    if cfg.probe_at_task_end:
        hooks.on_task_end.append(on_task_end_probe)
    return hooks


def _write_error(run_dir: Path, error: Exception) -> None:
    record = {
        "error": type(error).__name__,
        "message": str(error),
        "traceback": traceback.format_exception(type(error), error, error.__traceback__),
    }
    if isinstance(error, StreamStepError):
        record.update(step=error.step, position=error.position, pass_index=error.pass_index)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "error.json").write_text(json.dumps(record, indent=2), encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def run_experiment(config_path, resume: Optional[str] = None, progress: bool = True,
                   log_level: str = "INFO") -> int:
    """
    Train one configured run end to end.

    Writes steps.csv, metrics.csv, accuracy.csv, summary.csv,
    resolved_config.txt, source_schema.json, periodic checkpoints and final.ckpt into
    ``<output_dir>/<run_id>/``.

    Returns:
        0 on success, 2 for an invalid configuration, 1 for any other failure
        (partial artifacts stay in place, with error.json beside them).
    """
    try:
        cfg = ExperimentConfig.from_file(config_path)
    except ConfigError as e:
        logger.error(f"Invalid configuration {config_path}: {e}")
        return EXIT_CONFIG
    except FileNotFoundError as e:
        logger.error(str(e))
        return EXIT_CONFIG

    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    setup_logging(log_level, log_dir=run_dir)
    logger.info(f"{'=' * 60}")
    logger.info(f"Run {cfg.run_id}: {cfg.mode}/{cfg.policy} on {cfg.dataset}")
    logger.info(f"{'=' * 60}")

    try:
        source = build_source(cfg)
        train, test = load_datasets(cfg, source)
        schedule = build_stream(cfg, train)
        state = build_state(cfg, train)
        run_logger = RunLogger(run_dir, schedule.num_tasks)
        run_logger.write_config(cfg.to_lines())
        run_logger.write_schema(source.get_schema())

        accuracies: List[float] = []
        start_step = 0
        if resume:
            ckpt = load_checkpoint(resume)
            restore_state(state, ckpt)
            start_step = ckpt.step
            run_logger.truncate(start_step)
            previous = read_optional_csv(run_logger.path("accuracy.csv"))
            if previous is not None:
                accuracies.extend(previous["accuracy"].astype(float).tolist())
            logger.info(f"Resuming {cfg.run_id} from step {start_step}")
        else:
            for name in ("steps.csv", "metrics.csv", "accuracy.csv", "summary.csv", "error.json"):
                run_logger.path(name).unlink(missing_ok=True)

        hooks = build_hooks(cfg, run_logger, train, test, schedule, accuracies)
        try:
            run_stream(state, train, schedule, cfg.train_config(), hooks,
                       start_step=start_step, progress=progress)
        finally:
            run_logger.close()

        save_checkpoint(run_dir / "final.ckpt", capture_state(state))
        if accuracies:
            report = summarize(accuracies)
            run_logger.write_summary(cfg.run_id, state.step, report.final, report.average)
            logger.info(f"Final accuracy {report.final:.4f}, average {report.average:.4f}")
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except Exception as e:
        logger.exception(f"Run {cfg.run_id} failed")
        _write_error(run_dir, e)
        return 1

    logger.info(f"Run {cfg.run_id} complete: {run_dir}")
    return 0


def _run_summary(run_dir: Path) -> Dict[str, object]:
    accuracy = pd.read_csv(run_dir / "accuracy.csv")
    report = summarize(accuracy["accuracy"].tolist())
    row: Dict[str, object] = {
        "run_id": run_dir.name,
        "final_accuracy": report.final,
        "average_accuracy": report.average,
        "deviation_mean": None,
        "avg_overlap_count": None,
    }
    metrics = read_optional_csv(run_dir / "metrics.csv")
    if metrics is not None and len(metrics):
        last = metrics.iloc[-1]
        row["deviation_mean"] = float(last["deviation_mean"])
        row["avg_overlap_count"] = float(last["avg_overlap_count"])
    return row


def collect_report(directory) -> pd.DataFrame:
    """
    One row per run found at or directly below ``directory``.

    Raises:
        FileNotFoundError: no accuracy.csv anywhere.
    """
    directory = Path(directory)
    if (directory / "accuracy.csv").exists():
        run_dirs = [directory]
    else:
        run_dirs = sorted(p.parent for p in directory.glob("*/accuracy.csv"))
    if not run_dirs:
        raise FileNotFoundError(f"No accuracy.csv in {directory} or its run directories")
    return pd.DataFrame([_run_summary(d) for d in run_dirs])


def _cell(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "absent"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def report(directory, console: Optional[Console] = None) -> int:
    try:
        table_df = collect_report(directory)
    except (FileNotFoundError, KeyError, ValueError) as e:
        logger.error(f"Cannot report on {directory}: {e}")
        return 1

    table = Table(title=f"Runs in {directory}")
    headers = {
        "run_id": "Run",
        "final_accuracy": "Final Acc",
        "average_accuracy": "Average Acc",
        "deviation_mean": "Deviation",
        "avg_overlap_count": "Avg Overlap Count",
    }
    for column, title in headers.items():
        table.add_column(title, justify="left" if column == "run_id" else "right")
    for row in table_df.to_dict("records"):
        table.add_row(*(_cell(row[c]) for c in headers))
    (console or Console()).print(table)
    return 0


def _model_from_checkpoint(ckpt_path, config_path):
    cfg = ExperimentConfig.from_file(config_path)
    train, test = load_datasets(cfg)
    state = build_state(cfg, train)
    restore_state(state, load_checkpoint(ckpt_path))
    return cfg, train, test, state


def probe_checkpoint(ckpt_path, config_path, console: Optional[Console] = None) -> int:
    try:
        cfg, train, test, state = _model_from_checkpoint(ckpt_path, config_path)
        schedule = build_stream(cfg, train)
        result = probe_model(state.model, train, test, schedule.task_classes,
                             cfg.probe_config())
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except (CheckpointError, FileNotFoundError, ValueError) as e:
        logger.error(f"Probe failed: {e}")
        return 1

    table = Table(title=f"Linear probe: {ckpt_path} (step {state.step})")
    table.add_column("Split")
    table.add_column("Accuracy", justify="right")
    table.add_row("all", f"{result.accuracy:.4f}")
    for t, acc in enumerate(result.per_task):
        table.add_row(f"task {t}", _cell(acc))
    (console or Console()).print(table)
    return 0


def metrics_checkpoint(ckpt_path, config_path, console: Optional[Console] = None) -> int:
    try:
        cfg, _, test, state = _model_from_checkpoint(ckpt_path, config_path)
        row = latent_report(state.model, test, state.augmentation, seed=cfg.seed + 4,
                            n_aug=cfg.metrics_n_aug, subsample=cfg.metrics_subsample or None)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except (CheckpointError, FileNotFoundError, ValueError) as e:
        logger.error(f"Metrics failed: {e}")
        return 1

    table = Table(title=f"Latent metrics: {ckpt_path} (step {state.step})")
    table.add_column("Metric")
    table.add_column("Value", justify="right")
    for name, value in row.items():
        table.add_row(name, format_float(value))
    (console or Console()).print(table)
    return 0


# ---------------------------------------------------------------------------
# Logging + CLI
# ---------------------------------------------------------------------------

def setup_logging(log_level="INFO", log_dir: Optional[Path] = None):
    level = getattr(logging, log_level.upper(), logging.INFO)
    log_file = Path(log_dir) / LOG_FILE if log_dir else Path(LOG_FILE)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.FileHandler(log_file), logging.StreamHandler()],
        force=True,
    )
    logger.debug(f"Log level: {log_level.upper()}, log file: {log_file}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="SOLAR lab - online continual self-supervised learning experiments",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python src/main.py run config/runs/solar.conf            train one run
  python src/main.py run config/runs/solar.conf --resume runs/solar/checkpoints/step_00000100.ckpt
  python src/main.py report runs/                          one row per run
  python src/main.py probe runs/solar/final.ckpt config/runs/solar.conf
  python src/main.py metrics runs/solar/final.ckpt config/runs/solar.conf
        """,
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Logging verbosity (default: INFO)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Train over the configured stream.")
    run.add_argument("config", help="Run file of key=value lines.")
    run.add_argument("--resume", help="Checkpoint to continue from.")
    run.add_argument("--no-progress", action="store_true", help="Hide the progress bar.")

    rep = sub.add_parser("report", help="Summarize run directories.")
    rep.add_argument("directory", help="A run directory or a directory of runs.")

    probe = sub.add_parser("probe", help="Linear-probe a checkpoint.")
    probe.add_argument("checkpoint")
    probe.add_argument("config")

    metrics = sub.add_parser("metrics", help="Latent metrics of a checkpoint.")
    metrics.add_argument("checkpoint")
    metrics.add_argument("config")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    load_dotenv()

    if args.command == "run":
        return run_experiment(args.config, resume=args.resume, progress=not args.no_progress,
                              log_level=args.log_level)
    if args.command == "report":
        return report(args.directory)
    if args.command == "probe":
        return probe_checkpoint(args.checkpoint, args.config)
    return metrics_checkpoint(args.checkpoint, args.config)


if __name__ == "__main__":
    sys.exit(main())
