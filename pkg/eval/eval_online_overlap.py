"""
eval_online_overlap.py - Online buffer Overlap against the offline reference.

Fills a deviation-aware buffer from the synthetic stream with a frozen
model, refreshes every entry's EMA statistics a number of times from fresh
two-view passes, then compares the Overlap read from those statistics with
the one recomputed from 20-view hyperballs of the stored inputs.

Metrics:
  Tier 1: Online mean Overlap, offline mean Overlap, relative error,
          within-tolerance flag
  Tier 2: Online / offline Average Overlap Count

Usage:
    python eval/eval_online_overlap.py
    python eval/eval_online_overlap.py --refreshes 5 --tolerance 0.10 --output overlap.json
    python eval/eval_online_overlap.py --checkpoint runs/solar/final.ckpt --config config/runs/solar.conf
"""

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from config_loader import ExperimentConfig  # noqa: E402
from export import load_checkpoint, restore_state  # noqa: E402
from main import build_state, load_datasets  # noqa: E402
from metrics import offline_buffer_overlap, online_buffer_overlap  # noqa: E402
from model import per_sample_stats  # noqa: E402
from replay import DeviationAwareBuffer  # noqa: E402


def _metric(name: str, data_type: str, result, tier: int, **kwargs) -> dict:
    entry = {"name": name, "data_type": data_type, "tier": tier, "result": result}
    entry.update({k: v for k, v in kwargs.items() if v is not None})
    return entry


def frozen_setup(config_path, checkpoint):
    """Trainer state in eval mode and the training inputs, optionally restored."""
    if config_path:
        cfg = ExperimentConfig.from_file(config_path)
    else:
        cfg = ExperimentConfig.from_mapping({"run_id": "online_overlap"})
    train, _ = load_datasets(cfg)
    state = build_state(cfg, train)
    if checkpoint:
        restore_state(state, load_checkpoint(checkpoint))
    state.model.eval()
    return cfg, state, train


def main() -> None:
    ap = argparse.ArgumentParser(
        description="Compare the online EMA buffer Overlap with the offline 20-view reference."
    )
    ap.add_argument("--checkpoint", metavar="FILE", help="Frozen model to use (default: fresh)")
    ap.add_argument("--config", metavar="FILE", help="Run file matching the checkpoint")
    ap.add_argument("--buffer-size", type=int, default=128)
    ap.add_argument("--refreshes", type=int, default=5)
    ap.add_argument("--n-aug", type=int, default=20)
    ap.add_argument("--eta", type=float, default=0.5)
    ap.add_argument("--tolerance", type=float, default=0.10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--output", metavar="FILE", help="Write JSON to FILE (default: stdout)")
    args = ap.parse_args()

    cfg, state, train = frozen_setup(args.config, args.checkpoint)
    model, augmentation, image_shape = state.model, state.augmentation, state.image_shape
    rng = np.random.default_rng(args.seed)
    pick = np.sort(rng.choice(len(train), min(args.buffer_size, len(train)), replace=False))
    X = train.X[pick]

    print(f"Filling buffer with {pick.size} samples", flush=True)
    buffer = DeviationAwareBuffer(args.buffer_size, seed=args.seed, eta=args.eta)
    first = per_sample_stats(model, X, 2, augmentation, rng, include_self_pairs=False,
                             image_shape=image_shape)
    buffer.insert(pick, X, first.loss, first.mean_feature, first.mean_angle)
    for _ in range(args.refreshes):
        fresh = per_sample_stats(model, X, 2, augmentation, rng, include_self_pairs=False,
                                 image_shape=image_shape)
        buffer.update_stats(pick, fresh.loss, fresh.mean_feature, fresh.mean_angle)

    print(f"Computing {args.n_aug}-view reference", flush=True)
    online = online_buffer_overlap(buffer, include_self_pairs=False)
    offline = offline_buffer_overlap(model, buffer, augmentation, seed=args.seed + 1,
                                     n_aug=args.n_aug, include_self_pairs=False,
                                     image_shape=image_shape)
    error = online.relative_error(offline)

    all_metrics = [
        _metric("Online mean Overlap", "float", online.mean_overlap, 1),
        _metric("Offline mean Overlap", "float", offline.mean_overlap, 1, n_aug=args.n_aug),
        _metric("Relative error", "float", error, 1, refreshes=args.refreshes),
        _metric("Within tolerance", "binary", int(error < args.tolerance), 1,
                tolerance=args.tolerance),
        _metric("Online Average Overlap Count", "float", online.avg_overlap_count, 2),
        _metric("Offline Average Overlap Count", "float", offline.avg_overlap_count, 2),
    ]
    report = {
        "run_timestamp": datetime.now(tz=timezone.utc).isoformat(),
        "run_id": cfg.run_id,
        "checkpoint": args.checkpoint,
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
