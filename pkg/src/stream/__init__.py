"""Class-incremental stream construction and augmentation."""

from .augment import AugmentationConfig, augment, augment_batch
from .base_source import BaseSource
from .cifar_source import Cifar100Source, CifarFormatError, read_cifar_binary
from .dataset import LabeledDataset, LabeledSample
from .schedule import StreamBatch, StreamSchedule, build_schedule
from .synthetic_source import SyntheticSource, generate_synthetic

# Source lookup: ``dataset`` key in a run config -> source class
SOURCES = {
    "synthetic": SyntheticSource,
    "cifar100": Cifar100Source,
}

__all__ = [
    "AugmentationConfig",
    "augment",
    "augment_batch",
    "BaseSource",
    "Cifar100Source",
    "CifarFormatError",
    "read_cifar_binary",
    "LabeledDataset",
    "LabeledSample",
    "StreamBatch",
    "StreamSchedule",
    "build_schedule",
    "SyntheticSource",
    "generate_synthetic",
    "SOURCES",
]
