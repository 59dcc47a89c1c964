from __future__ import annotations

import json
import sys
from pathlib import Path

import h5py
import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

import torch

torch.set_num_threads(max(1, __import__("os").cpu_count() or 1))


def write_container(path: Path, images: np.ndarray, masks: np.ndarray,
                    modality: str = "asm", real_indices=()) -> Path:
    """Minimal writer for the documented container format (test fixtures)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with h5py.File(path, "w") as f:
        f.create_dataset("syn_stream", data=images.astype(np.uint8))
        f.create_dataset("ground_truth", data=masks.astype(np.uint8))
        f.attrs["modality"] = modality
        f.attrs["seed"] = 0
        f.attrs["real_item_indices"] = np.asarray(real_indices, dtype=np.int64)
        f.attrs["composition"] = json.dumps({})
    return path


def toy_arrays(n: int, size: int = 64, seed: int = 0):
    """Half flat-gray negatives, half with a bright square defect."""
    rng = np.random.default_rng(seed)
    images = np.full((n, size, size), 128, np.uint8)
    masks = np.zeros((n, size, size), np.uint8)
    for i in range(n):
        if i % 2 == 1:
            r, c = rng.integers(4, size - 20, 2)
            images[i, r:r + 12, c:c + 12] = 250
            masks[i, r:r + 12, c:c + 12] = 255
    return images, masks


def write_split(root: Path, n_good: int, n_defect: int, size: int = 64, seed: int = 1) -> Path:
    rng = np.random.default_rng(seed)
    (root / "test" / "good").mkdir(parents=True, exist_ok=True)
    (root / "test" / "synthetic").mkdir(parents=True, exist_ok=True)
    (root / "ground_truth" / "synthetic").mkdir(parents=True, exist_ok=True)
    for i in range(n_good):
        Image.fromarray(np.full((size, size), 128, np.uint8)).save(
            root / "test" / "good" / f"{i:04d}.png")
    for i in range(n_defect):
        px = np.full((size, size), 128, np.uint8)
        mask = np.zeros((size, size), np.uint8)
        r, c = rng.integers(4, size - 20, 2)
        px[r:r + 12, c:c + 12] = 250
        mask[r:r + 12, c:c + 12] = 255
        Image.fromarray(px).save(root / "test" / "synthetic" / f"{i:04d}.png")
        Image.fromarray(mask).save(root / "ground_truth" / "synthetic" / f"{i:04d}_mask.png")
    return root


@pytest.fixture
def tiny_container(tmp_path):
    images, masks = toy_arrays(32)
    return write_container(tmp_path / "tiny.h5", images, masks)


@pytest.fixture
def tiny_split(tmp_path):
    return write_split(tmp_path / "split", n_good=8, n_defect=8)
