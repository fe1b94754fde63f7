"""
BaseSource: Abstract base class for stream data sources.

A source knows how to fetch its raw files (if any), turn them into a
train/test pair of LabeledDatasets, and describe what it produces.
"""

import logging
import os
import tarfile
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, Optional

import requests

from .dataset import LabeledDataset

logger = logging.getLogger(__name__)


class BaseSource(ABC):
    """
    Abstract base class for stream data sources.

    Subclasses implement download_data, load_data and get_schema.
    """

    def __init__(self, data_dir: Optional[str] = None):
        """
        Args:
            data_dir: Directory for downloaded/cached files. Defaults to
                $SOLAR_DATA_DIR, then ./data.
        """
        if data_dir is None:
            data_dir = os.environ.get("SOLAR_DATA_DIR", "data")

        self.data_dir = Path(data_dir)
        self.source_name = self.__class__.__name__.replace("Source", "").lower()
        self.source_dir = self.data_dir / self.source_name
        self.force = False

        logger.debug(f"Initialized {self.__class__.__name__} (data dir: {self.source_dir})")

    @abstractmethod
    def download_data(self) -> bool:
        """
        Make the raw files available locally.

        Returns:
            True if the files are present afterwards, False otherwise.
        """

    @abstractmethod
    def load_data(self) -> Dict[str, LabeledDataset]:
        """
        Returns:
            {"train": dataset, "test": dataset}
        """

    @abstractmethod
    def get_schema(self) -> Dict[str, str]:
        """Describe the produced datasets (dimension, classes, layout)."""

    def download_file(self, url: str, filename: str) -> Optional[Path]:
        """
        Download ``url`` into the source directory unless already present.

        Returns:
            Path of the local file, or None if the download failed.
        """
        self.source_dir.mkdir(parents=True, exist_ok=True)
        filepath = self.source_dir / filename

        if filepath.exists() and not self.force:
            logger.info(f"File already exists: {filepath}")
            return filepath

        try:
            logger.info(f"Downloading from {url} to {filepath}")
            response = requests.get(url, stream=True, timeout=300)
            response.raise_for_status()
            with open(filepath, "wb") as f:
                for chunk in response.iter_content(chunk_size=1 << 16):
                    f.write(chunk)
            logger.info(f"Downloaded {filepath}")
            return filepath
        except requests.RequestException as e:
            logger.error(f"Failed to download {url}: {e}")
            return None

    def extract_tar(self, archive: Path) -> Optional[Path]:
        """Extract a .tar.gz archive next to itself; returns the source directory."""
        try:
            with tarfile.open(archive, "r:gz") as tar:
                tar.extractall(self.source_dir, filter="data")
            logger.info(f"Extracted {archive}")
            return self.source_dir
        except (tarfile.TarError, OSError) as e:
            logger.error(f"Failed to extract {archive}: {e}")
            return None
