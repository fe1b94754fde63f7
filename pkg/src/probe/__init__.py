"""Linear probing and the Final/Average Accuracy summary."""

from .linear_probe import (
    AccuracyReport,
    LinearClassifier,
    ProbeConfig,
    ProbeResult,
    evaluate_accuracy,
    fit_linear_probe,
    probe_model,
    summarize,
)

__all__ = [
    "AccuracyReport",
    "LinearClassifier",
    "ProbeConfig",
    "ProbeResult",
    "evaluate_accuracy",
    "fit_linear_probe",
    "probe_model",
    "summarize",
]
