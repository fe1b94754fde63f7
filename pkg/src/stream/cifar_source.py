"""
CIFAR-100 binary reader.

Record layout (3074 bytes): byte 0 coarse label, byte 1 fine label,
bytes 2..3073 pixels as R plane, G plane, B plane, each 32x32 row-major.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .base_source import BaseSource
from .dataset import LabeledDataset

logger = logging.getLogger(__name__)

RECORD_BYTES = 3074
IMAGE_SHAPE = (3, 32, 32)
NUM_COARSE = 20
NUM_FINE = 100
ARCHIVE_URL = "https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz"


class CifarFormatError(ValueError):
    """Malformed CIFAR binary file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


def read_cifar_binary(path, coarse_or_fine: str = "fine",
                      channel_stats: Optional[Tuple[np.ndarray, np.ndarray]] = None
                      ) -> LabeledDataset:
    """
    Parse a CIFAR-100 binary file into a standardized dataset.

    Args:
        path: File to read.
        coarse_or_fine: Which label byte to use ("coarse" or "fine").
        channel_stats: Optional (mean, std) per channel to standardize with,
            e.g. the training split's statistics for the test split. By
            default the file's own statistics are used.

    Raises:
        CifarFormatError: Truncated record or label out of range.
    """
    if coarse_or_fine not in ("coarse", "fine"):
        raise ValueError(f"coarse_or_fine must be 'coarse' or 'fine', got {coarse_or_fine!r}")
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    num_classes = NUM_COARSE if coarse_or_fine == "coarse" else NUM_FINE

    if raw.size % RECORD_BYTES:
        raise CifarFormatError("truncated record", (raw.size // RECORD_BYTES) * RECORD_BYTES)
    records = raw.reshape(-1, RECORD_BYTES)
    if records.shape[0] == 0:
        return LabeledDataset(np.zeros((0, RECORD_BYTES - 2)), np.zeros(0), num_classes,
                              IMAGE_SHAPE)

    label_col = 0 if coarse_or_fine == "coarse" else 1
    labels = records[:, label_col].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise CifarFormatError(f"{coarse_or_fine} label {labels[bad[0]]} out of range",
                               int(bad[0]) * RECORD_BYTES + label_col)

    pixels = records[:, 2:].astype(np.float64).reshape(-1, *IMAGE_SHAPE) / 255.0
    if channel_stats is None:
        mean = pixels.mean(axis=(0, 2, 3))
        std = pixels.std(axis=(0, 2, 3))
    else:
        mean, std = channel_stats
    std = np.where(std > 0, std, 1.0)
    pixels = (pixels - mean[None, :, None, None]) / std[None, :, None, None]
    logger.debug(f"Read {records.shape[0]} CIFAR records from {path}")
    return LabeledDataset(pixels.reshape(records.shape[0], -1), labels, num_classes,
                          IMAGE_SHAPE)


def channel_statistics(path) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of the [0,1]-scaled pixels of a binary file."""
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    usable = (raw.size // RECORD_BYTES) * RECORD_BYTES
    pixels = raw[:usable].reshape(-1, RECORD_BYTES)[:, 2:].reshape(-1, *IMAGE_SHAPE) / 255.0
    return pixels.mean(axis=(0, 2, 3)), pixels.std(axis=(0, 2, 3))


class Cifar100Source(BaseSource):
    """CIFAR-100 from the public binary archive."""

    def __init__(self, label_kind: str = "fine", download: bool = True,
                 data_dir: Optional[str] = None):
        super().__init__(data_dir)
        self.label_kind = label_kind
        self.download = download
        self.binary_dir = self.source_dir / "cifar-100-binary"

    def download_data(self) -> bool:
        if (self.binary_dir / "train.bin").exists() and not self.force:
            logger.info(f"CIFAR-100 binaries present in {self.binary_dir}")
            return True
        if not self.download:
            logger.warning(f"CIFAR-100 binaries missing in {self.binary_dir} and download disabled")
            return False
        archive = self.download_file(ARCHIVE_URL, "cifar-100-binary.tar.gz")
        if archive is None:
            return False
        return self.extract_tar(archive) is not None

    def load_data(self) -> Dict[str, LabeledDataset]:
        train_path = self.binary_dir / "train.bin"
        test_path = self.binary_dir / "test.bin"
        if not train_path.exists():
            raise FileNotFoundError(f"CIFAR-100 training file not found: {train_path}")
        stats = channel_statistics(train_path)
        train = read_cifar_binary(train_path, self.label_kind, channel_stats=stats)
        test = read_cifar_binary(test_path, self.label_kind, channel_stats=stats)
        logger.info(f"CIFAR-100 ({self.label_kind}): {len(train)} train / {len(test)} test")
        return {"train": train, "test": test}

    def get_schema(self) -> Dict[str, str]:
        return {
            "layout": "image",
            "dim": str(RECORD_BYTES - 2),
            "image_shape": "x".join(map(str, IMAGE_SHAPE)),
            "num_classes": str(NUM_COARSE if self.label_kind == "coarse" else NUM_FINE),
        }
