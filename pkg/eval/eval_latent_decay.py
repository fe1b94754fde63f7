"""
eval_latent_decay.py - Latent rehearsal decay across replay policies.

Trains FIFO, Reservoir and SOLAR runs on the synthetic 10-class / 5-task
stream for several seeds and compares the latent metrics of the second and
final quarter of each run.

Metrics:
  Tier 1: Deviation drop per run (second-quarter mean minus final-quarter mean),
          Average Overlap Count rise per run,
          Decay signature flag per run (Deviation falls and Overlap rises)
  Tier 2: Final / Average probe accuracy per run,
          SOLAR at least as accurate as Reservoir, per seed

Output JSON schema (one object per metric):
  name         metric name
  data_type    float | binary
  tier         1 or 2
  result       the computed value
  (extra keys) policy, seed, note

Usage:
    python eval/eval_latent_decay.py
    python eval/eval_latent_decay.py --seeds 0 1 2 --output decay.json
    python eval/eval_latent_decay.py --workdir /tmp/decay --passes 12 --buffer-size 128
"""

import argparse
import json
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import pandas as pd

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from main import run_experiment  # noqa: E402
from probe import summarize  # noqa: E402

RUNS = {
    "fifo": {"policy": "fifo", "mode": "er"},
    "reservoir": {"policy": "reservoir", "mode": "er"},
    "solar": {"policy": "deviation_aware", "mode": "solar", "overlap_weight": 1.0},
}


def _metric(name: str, data_type: str, result, tier: int, **kwargs) -> dict:
    entry = {"name": name, "data_type": data_type, "tier": tier, "result": result}
    entry.update({k: v for k, v in kwargs.items() if v is not None})
    return entry


def write_run_file(path: Path, run_id: str, seed: int, output_dir: Path, passes: int,
                   buffer_size: int, metrics_every: int, overrides: dict) -> Path:
    lines = [
        f"run_id={run_id}",
        f"output_dir={output_dir}",
        f"seed={seed}",
        "dataset=synthetic",
        "num_classes=10",
        "num_tasks=5",
        f"passes={passes}",
        f"buffer_size={buffer_size}",
        f"metrics_every={metrics_every}",
    ] + [f"{k}={v}" for k, v in overrides.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def quarter_means(metrics: pd.DataFrame, total_steps: int) -> dict:
    """Mean metric values over the second and the final quarter of training."""
    steps = metrics["checkpoint_step"]
    second = metrics[(steps > total_steps / 4) & (steps <= total_steps / 2)]
    final = metrics[steps > 3 * total_steps / 4]
    return {
        "deviation": (second["deviation_mean"].mean(), final["deviation_mean"].mean()),
        "overlap": (second["avg_overlap_count"].mean(), final["avg_overlap_count"].mean()),
    }


def evaluate_run(run_dir: Path, policy: str, seed: int) -> tuple[list[dict], dict]:
    metrics = pd.read_csv(run_dir / "metrics.csv")
    accuracy = pd.read_csv(run_dir / "accuracy.csv")
    total_steps = int(pd.read_csv(run_dir / "steps.csv")["step"].max()) + 1
    q = quarter_means(metrics, total_steps)
    (dev_q2, dev_q4), (ov_q2, ov_q4) = q["deviation"], q["overlap"]
    report = summarize(accuracy["accuracy"].tolist())

    results = [
        _metric("Deviation drop (second to final quarter)", "float",
                float(dev_q2 - dev_q4), 1, policy=policy, seed=seed),
        _metric("Average Overlap Count rise (second to final quarter)", "float",
                float(ov_q4 - ov_q2), 1, policy=policy, seed=seed),
        _metric("Latent rehearsal decay signature", "binary",
                int(dev_q4 < dev_q2 and ov_q4 > ov_q2), 1, policy=policy, seed=seed,
                note="expected for reservoir only"),
        _metric("Final accuracy", "float", report.final, 2, policy=policy, seed=seed),
        _metric("Average accuracy", "float", report.average, 2, policy=policy, seed=seed),
    ]
    return results, {"final": report.final, "average": report.average}


def main() -> None:
    ap = argparse.ArgumentParser(
        description="Compare latent decay of FIFO, Reservoir and SOLAR on the synthetic stream."
    )
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--passes", type=int, default=12, help="steps per stream minibatch")
    ap.add_argument("--buffer-size", type=int, default=128)
    ap.add_argument("--metrics-every", type=int, default=50)
    ap.add_argument("--workdir", metavar="DIR", help="Keep run directories here")
    ap.add_argument("--output", metavar="FILE", help="Write JSON to FILE (default: stdout)")
    args = ap.parse_args()

    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="decay_"))
    workdir.mkdir(parents=True, exist_ok=True)

    all_metrics: list[dict] = []
    accuracies: dict[tuple[str, int], dict] = {}
    for seed in args.seeds:
        for policy, overrides in RUNS.items():
            run_id = f"{policy}_seed{seed}"
            conf = write_run_file(workdir / f"{run_id}.conf", run_id, seed, workdir,
                                  args.passes, args.buffer_size, args.metrics_every, overrides)
            print(f"Training {run_id}", flush=True)
            if run_experiment(conf, progress=False, log_level="WARNING") != 0:
                all_metrics.append(_metric("Run completed", "binary", 0, 1, policy=policy,
                                           seed=seed))
                continue
            results, acc = evaluate_run(workdir / run_id, policy, seed)
            all_metrics.extend(results)
            accuracies[(policy, seed)] = acc

    for seed in args.seeds:
        solar, reservoir = accuracies.get(("solar", seed)), accuracies.get(("reservoir", seed))
        if solar is None or reservoir is None:
            continue
        all_metrics.append(_metric(
            "SOLAR accuracy at least Reservoir's", "binary",
            int(solar["final"] >= reservoir["final"] and solar["average"] >= reservoir["average"]),
            2, seed=seed,
        ))

    report = {
        "run_timestamp": datetime.now(tz=timezone.utc).isoformat(),
        "workdir": str(workdir),
        "metrics": all_metrics,
    }
    output = json.dumps(report, indent=2, default=str)
    if args.output:
        Path(args.output).write_text(output)
        print(f"Report written to {args.output}")
    else:
        print(output)


if __name__ == "__main__":
    main()
