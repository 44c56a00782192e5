"""Dataset resolution for the MNIST family (torchvision storage layout)."""

from __future__ import annotations

from pathlib import Path

from torchvision import datasets, transforms


class DatasetMissingError(RuntimeError):
    """The requested dataset is not on disk and could not be downloaded."""


DATASETS = {
    "mnist": datasets.MNIST,
    "fashion-mnist": datasets.FashionMNIST,
    "kmnist": datasets.KMNIST,
}


def load(name: str, split: str, data_root, download: bool = True):
    """Load a dataset split as tensors in [0, 1]; raise if unavailable."""
    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}, expected one of {sorted(DATASETS)}")
    root = Path(data_root)
    try:
        return DATASETS[name](
            str(root), train=(split == "train"), download=download,
            transform=transforms.ToTensor(),
        )
    except Exception as e:  # torchvision raises RuntimeError or URLError subclasses
        raise DatasetMissingError(
            f"dataset {name!r} not available under {root} and download failed: {e}"
        ) from e


def available(name: str, data_root) -> bool:
    try:
        load(name, "test", data_root, download=False)
        return True
    except (DatasetMissingError, ValueError):
        return False
