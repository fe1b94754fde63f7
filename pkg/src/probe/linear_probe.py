"""
Linear probing on frozen encoder features.

Multinomial logistic regression trained with minibatch SGD through the
ValueGraph. The learning rate is divided by ``decay_factor`` whenever the
validation accuracy has not improved for ``patience`` epochs; training stops
once the rate would drop below ``min_lr`` or after ``max_epochs``. The
weights with the best validation accuracy are kept.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from model import SSLModel
from numerics import OptimizerState, ValueGraph, backward, sgd_update
from stream import LabeledDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeConfig:
    batch_size: int = 256
    learning_rate: float = 0.05
    decay_factor: float = 3.0
    max_epochs: int = 100
    min_lr: Optional[float] = None     # defaults to learning_rate / decay_factor**4
    val_fraction: float = 0.10
    patience: int = 3
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.decay_factor <= 1.0:
            raise ValueError(f"decay_factor must exceed 1, got {self.decay_factor}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")

    @property
    def resolved_min_lr(self) -> float:
        if self.min_lr is not None:
            return self.min_lr
        return self.learning_rate / self.decay_factor ** 4


@dataclass
class LinearClassifier:
    weights: np.ndarray        # (d, C)
    bias: np.ndarray           # (C,)
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def logits(self, features: np.ndarray) -> np.ndarray:
        Z = (np.asarray(features, dtype=np.float64) - self.feature_mean) / self.feature_scale
        return Z @ self.weights + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(features), axis=1)


@dataclass
class AccuracyReport:
    per_checkpoint: List[float]
    final: float
    average: float


@dataclass
class ProbeResult:
    accuracy: float
    per_task: List[float] = field(default_factory=list)


def _train_epoch(params, state, Z, y, order, batch_size):
    for start in range(0, order.size, batch_size):
        idx = order[start:start + batch_size]
        graph = ValueGraph()
        x = graph.constant(Z[idx])
        w = graph.leaf(params["weights"], name="weights", requires_grad=True)
        b = graph.leaf(params["bias"], name="bias", requires_grad=True)
        loss = graph.softmax_cross_entropy(graph.bias_add(graph.matmul(x, w), b), y[idx])
        grads = backward(graph, loss)
        sgd_update(params, grads, state)


def fit_linear_probe(features: np.ndarray, labels: np.ndarray, cfg: ProbeConfig,
                     num_classes: Optional[int] = None) -> LinearClassifier:
    """
    Train a linear classifier on frozen features.

    Raises:
        ValueError: fewer than two distinct labels.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if np.unique(labels).size < 2:
        raise ValueError("linear probe needs at least two classes")
    num_classes = num_classes or int(labels.max()) + 1

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(labels.size)
    n_val = min(max(1, int(round(cfg.val_fraction * labels.size))), labels.size - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    mean = features[train_idx].mean(axis=0)
    scale = features[train_idx].std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Z = (features - mean) / scale

    params = {
        "weights": np.zeros((features.shape[1], num_classes)),
        "bias": np.zeros(num_classes),
    }
    state = OptimizerState.for_params(params, learning_rate=cfg.learning_rate,
                                      momentum=cfg.momentum)
    best_acc, best = -1.0, {k: v.copy() for k, v in params.items()}
    stale = 0
    min_lr = cfg.resolved_min_lr

    for epoch in range(cfg.max_epochs):
        _train_epoch(params, state, Z, labels, train_idx[rng.permutation(train_idx.size)],
                     cfg.batch_size)
        val_pred = np.argmax(Z[val_idx] @ params["weights"] + params["bias"], axis=1)
        val_acc = float(np.mean(val_pred == labels[val_idx]))
        if val_acc > best_acc:
            best_acc, stale = val_acc, 0
            best = {k: v.copy() for k, v in params.items()}
            continue
        stale += 1
        if stale >= cfg.patience:
            next_lr = state.learning_rate / cfg.decay_factor
            if next_lr < min_lr * (1 - 1e-9):
                logger.debug(f"probe stopped at epoch {epoch + 1} (lr floor reached)")
                break
            state.learning_rate = next_lr
            stale = 0

    logger.debug(f"probe validation accuracy {best_acc:.4f}")
    return LinearClassifier(best["weights"], best["bias"], mean, scale)


def evaluate_accuracy(classifier: LinearClassifier, features: np.ndarray,
                      labels: np.ndarray) -> float:
    """Top-1 accuracy; an empty evaluation set is rejected."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot evaluate accuracy on an empty set")
    if np.shape(features)[0] != labels.size:
        raise ValueError("features and labels disagree in length")
    return float(np.mean(classifier.predict(features) == labels))


def summarize(accuracies: Sequence[float]) -> AccuracyReport:
    """Final = last task-end accuracy, average = mean over all task ends."""
    accuracies = [float(a) for a in accuracies]
    if not accuracies:
        raise ValueError("no accuracies to summarize")
    return AccuracyReport(accuracies, accuracies[-1], float(np.mean(accuracies)))


def probe_model(model: SSLModel, train: LabeledDataset, test: LabeledDataset,
                task_classes: Sequence[np.ndarray], cfg: ProbeConfig) -> ProbeResult:
    """Fit on frozen train features; report overall and per-task test accuracy."""
    before = model.encoder_checksum()
    train_features = model.embed(train.X)[0]
    test_features = model.embed(test.X)[0]
    classifier = fit_linear_probe(train_features, train.labels, cfg, train.num_classes)
    predictions = classifier.predict(test_features)
    accuracy = evaluate_accuracy(classifier, test_features, test.labels)

    per_task = []
    for classes in task_classes:
        mask = np.isin(test.labels, classes)
        per_task.append(float(np.mean(predictions[mask] == test.labels[mask]))
                        if mask.any() else float("nan"))
    if model.encoder_checksum() != before:
        raise RuntimeError("probing modified encoder parameters")
    return ProbeResult(accuracy, per_task)
