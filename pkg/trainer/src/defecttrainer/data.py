"""Datasets over the toolkit's on-disk formats: the supervised HDF5 container
(`syn_stream` / `ground_truth` datasets) and MVTec-style folder splits."""

from __future__ import annotations

import json
from pathlib import Path

import h5py
import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

from .preprocess import BRIGHTNESS_BY_MODALITY, preprocess_pixels

# grayscale normalization applied after preprocessing (value range 0..1)
NORM_MEAN = 0.449
NORM_STD = 0.226


def to_model_tensor(pixels: np.ndarray) -> torch.Tensor:
    """Preprocessed uint8 HxW -> normalized float 3xHxW (channel-replicated)."""
    x = pixels.astype(np.float32) / 255.0
    x = (x - NORM_MEAN) / NORM_STD
    return torch.from_numpy(x).unsqueeze(0).repeat(3, 1, 1)


class ContainerDataset(Dataset):
    """Training stream from the supervised container.

    Labels are image-level: mask non-zero, or the item index is flagged as an
    injected real defect in the container attributes.
    """

    def __init__(self, path: str | Path, brightness_factor: float | None = None):
        self.path = Path(path)
        with h5py.File(self.path, "r") as f:
            if "syn_stream" not in f or "ground_truth" not in f:
                raise ValueError(f"{path}: not a supervised container "
                                 "(needs syn_stream and ground_truth datasets)")
            self.images = f["syn_stream"][...]
            masks = f["ground_truth"][...]
            self.modality = str(f.attrs.get("modality", "asm"))
            real = np.asarray(f.attrs.get("real_item_indices", []), dtype=np.int64)
            self.composition = json.loads(f.attrs.get("composition", "{}"))
        labels = (masks.reshape(len(self.images), -1) > 0).any(axis=1)
        labels[real] = True
        self.labels = labels.astype(np.float32)
        if brightness_factor is None:
            brightness_factor = BRIGHTNESS_BY_MODALITY.get(self.modality, 1.0)
        self.brightness_factor = brightness_factor

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, index: int):
        pixels = preprocess_pixels(self.images[index], self.brightness_factor)
        return to_model_tensor(pixels), torch.tensor([self.labels[index]])


def _load_gray(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode == "RGB":
            arr = np.asarray(img, dtype=np.float64)
            gray = arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114
            return np.rint(gray).clip(0, 255).astype(np.uint8)
        if img.mode != "L":
            raise ValueError(f"{path}: unsupported PNG mode {img.mode!r}")
        return np.asarray(img, dtype=np.uint8)


class FolderDataset(Dataset):
    """test/ part of an MVTec-style split; ids are extension-less posix paths
    relative to the split root (the ids the toolkit's evaluate joins on)."""

    def __init__(self, root: str | Path, modality: str = "asm",
                 brightness_factor: float | None = None, part: str = "test"):
        self.root = Path(root)
        self.samples: list[tuple[str, Path, float]] = []
        part_dir = self.root / part
        if part_dir.is_dir():
            for image_path in sorted(part_dir.glob("*/*.png")):
                rel_id = image_path.relative_to(self.root).with_suffix("").as_posix()
                defective = image_path.parent.name != "good"
                self.samples.append((rel_id, image_path, float(defective)))
        if brightness_factor is None:
            brightness_factor = BRIGHTNESS_BY_MODALITY.get(modality, 1.0)
        self.brightness_factor = brightness_factor

    def __len__(self) -> int:
        return len(self.samples)

    def ids(self) -> list[str]:
        return [s[0] for s in self.samples]

    def __getitem__(self, index: int):
        _, path, label = self.samples[index]
        pixels = preprocess_pixels(_load_gray(path), self.brightness_factor)
        return to_model_tensor(pixels), torch.tensor([label])
