"""
Stochastic view generation.

Two pipelines:
  synthetic: additive Gaussian noise, then independent coordinate zeroing
  image:     pad-and-crop, horizontal flip, colour jitter, grayscale on
              (3, 32, 32) images stored as flattened rows

Two calls with independent draws from the same generator give the two
paired views of a sample.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from .dataset import LabeledSample

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentationConfig:
    kind: str = "synthetic"
    noise_std: float = 0.1
    dropout: float = 0.2
    crop_padding: int = 4
    flip_prob: float = 0.5
    jitter_strength: float = 0.4
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("synthetic", "image"):
            raise ValueError(f"unknown augmentation kind '{self.kind}'")
        for name in ("dropout", "flip_prob", "jitter_prob", "grayscale_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be nonnegative, got {self.noise_std}")
        if self.crop_padding < 0 or self.jitter_strength < 0:
            raise ValueError("crop_padding and jitter_strength must be nonnegative")

    def identity(self) -> bool:
        if self.kind == "synthetic":
            return self.noise_std == 0 and self.dropout == 0
        return (self.crop_padding == 0 and self.flip_prob == 0
                and (self.jitter_prob == 0 or self.jitter_strength == 0)
                and self.grayscale_prob == 0)


def _synthetic_views(X: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator
                     ) -> np.ndarray:
    noisy = X + rng.normal(0.0, cfg.noise_std, size=X.shape)
    keep = rng.random(X.shape) >= cfg.dropout
    return (noisy * keep).astype(X.dtype, copy=False)


def _jitter(img: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    b, c, s = rng.uniform(1.0 - strength, 1.0 + strength, size=3)
    img = img * b
    img = (img - img.mean()) * c + img.mean()
    gray = np.tensordot(LUMA, img, axes=1)
    return gray[None] + s * (img - gray[None])


def _image_view(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator
                ) -> np.ndarray:
    pad = cfg.crop_padding
    if pad:
        _, h, w = img.shape
        padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)))
        top, left = rng.integers(0, 2 * pad + 1, size=2)
        img = padded[:, top:top + h, left:left + w]
    if rng.random() < cfg.flip_prob:
        img = img[:, :, ::-1]
    if rng.random() < cfg.jitter_prob:
        img = _jitter(img, cfg.jitter_strength, rng)
    if rng.random() < cfg.grayscale_prob:
        img = np.broadcast_to(np.tensordot(LUMA, img, axes=1), img.shape)
    return np.ascontiguousarray(img)


def augment_batch(X: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator,
                  image_shape=(3, 32, 32)) -> np.ndarray:
    """One augmented view of every row of ``X``."""
    if cfg.kind == "synthetic":
        return _synthetic_views(X, cfg, rng)
    if X.shape[1] != int(np.prod(image_shape)):
        raise ValueError(f"image pipeline expects rows of {np.prod(image_shape)} values, "
                         f"got {X.shape[1]}")
    views = [_image_view(row.reshape(image_shape), cfg, rng).ravel() for row in X]
    return np.stack(views).astype(X.dtype, copy=False)


def augment(x: Union[LabeledSample, np.ndarray], cfg: AugmentationConfig,
            rng: np.random.Generator, image_shape=(3, 32, 32)) -> np.ndarray:
    """One augmented view of a single sample."""
    vec = x.x if isinstance(x, LabeledSample) else np.asarray(x)
    return augment_batch(vec[None, :], cfg, rng, image_shape)[0]
