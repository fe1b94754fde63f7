"""One metrics.csv row for a model checkpoint."""

import logging
from typing import Dict, Optional

import numpy as np

from model import SSLModel
from stream import LabeledDataset
from stream.augment import AugmentationConfig

from .collapse import collapse_row, uniformity_loss
from .latent import avg_overlap_count, hyperball_summaries

logger = logging.getLogger(__name__)


def latent_report(model: SSLModel, dataset: LabeledDataset, cfg: AugmentationConfig,
                  seed: int, n_aug: int = 20, subsample: Optional[int] = None,
                  include_self_pairs: Optional[bool] = None) -> Dict[str, float]:
    """
    Deviation, Average Overlap Count, uniformity and CEV levels of ``dataset``.

    The augmentation and subsample draws use ``seed`` only, so two calls on
    the same checkpoint agree.
    """
    X = dataset.X
    if subsample is not None and subsample < X.shape[0]:
        pick = np.random.default_rng([seed, 3]).choice(X.shape[0], subsample, replace=False)
        X = X[np.sort(pick)]
    if include_self_pairs is None:
        include_self_pairs = model.cfg.include_self_pairs
    balls = hyperball_summaries(model, X, n_aug, cfg, seed,
                                include_self_pairs=include_self_pairs,
                                image_shape=dataset.image_shape or (3, 32, 32))
    features = model.embed(X)[0]
    row = {
        "deviation_mean": float(balls.deviations.mean()),
        "avg_overlap_count": avg_overlap_count(balls, include_self_pairs),
        "uniformity": uniformity_loss(features),
    }
    row.update(collapse_row(features))
    logger.debug("latent report: deviation %.4f, overlap count %.4f",
                 row["deviation_mean"], row["avg_overlap_count"])
    return row
