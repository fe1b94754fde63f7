"""Shared fixtures; puts src/ on the import path like src/main.py does."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from model import ModelConfig, SSLModel  # noqa: E402
from stream import AugmentationConfig, generate_synthetic  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(input_dim=6, hidden_dim=8, feature_dim=5, projector_hidden=6,
                       projection_dim=4, predictor_hidden=3, seed=7)


@pytest.fixture
def tiny_model(tiny_model_config):
    return SSLModel(tiny_model_config)


@pytest.fixture
def toy_dataset():
    """4 classes x 20 samples in 6 dimensions, float32 like a training run."""
    return generate_synthetic(num_classes=4, per_class=20, dim=6, cluster_scale=3.0,
                              seed=3).astype(np.float32)


@pytest.fixture
def vector_augmentation():
    return AugmentationConfig(kind="synthetic", noise_std=0.1, dropout=0.2, rng_seed=11)
