"""On-disk formats: MVTec-style folder splits of 8-bit PNGs, the supervised
HDF5 container with datasets `syn_stream` / `ground_truth`, and the
predictions CSV consumed by evaluation.

Folder layout:
    root/train/good/*.png
    root/test/good/*.png
    root/test/<group>/*.png            group in {points, area, synthetic}
    root/ground_truth/<group>/<stem>_mask.png   (bare <stem>.png also accepted)

Sample ids are extension-less posix paths relative to the split root,
e.g. "test/points/0003". Iteration order is lexicographic by path.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import h5py
import numpy as np
from PIL import Image

from .imagetypes import GroundTruthMask, ImageLabel, Patch, to_gray
from .metrics import ScoredSample
from .stream import EpochSummary, StreamItem

IMAGES_DATASET = "syn_stream"
MASKS_DATASET = "ground_truth"
CONTAINER_VERSION = 1


class DataError(ValueError):
    """A file or layout violates the documented format."""


# -- PNG ---------------------------------------------------------------------

_ALLOWED_MODES = {"L": 1, "RGB": 3}


def load_png(path: str | Path) -> np.ndarray:
    """8-bit grayscale or rgb PNG as a uint8 array; anything else errors."""
    path = Path(path)
    with Image.open(path) as img:
        if img.mode not in _ALLOWED_MODES:
            raise DataError(f"{path}: unsupported PNG mode {img.mode!r}; need 8-bit L or RGB")
        return np.asarray(img, dtype=np.uint8)


def save_png(path: str | Path, pixels: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise DataError(f"{path}: PNG pixels must be uint8, got {pixels.dtype}")
    Image.fromarray(pixels).save(path, format="PNG")


def _load_mask_png(path: Path) -> GroundTruthMask:
    with Image.open(path) as img:
        if img.mode != "L":
            raise DataError(f"{path}: mask PNGs must be single-channel 8-bit, got mode {img.mode!r}")
        return GroundTruthMask(np.asarray(img, dtype=np.uint8) > 0)


# -- MVTec-style folder split --------------------------------------------------


@dataclass(eq=False)
class FolderSample:
    """One image of a folder split, loaded lazily."""

    id: str
    image_path: Path
    label: ImageLabel
    mask_path: Path | None = None

    def load_patch(self, modality: str = "lsm1") -> Patch:
        """Patch in the canonical single-channel internal form."""
        return Patch(pixels=to_gray(load_png(self.image_path)), modality=modality,
                     source=self.id)

    def load_raw(self) -> np.ndarray:
        return load_png(self.image_path)

    def load_mask(self) -> GroundTruthMask | None:
        if self.mask_path is None:
            return None
        return _load_mask_png(self.mask_path)


@dataclass(eq=False)
class FolderSplit:
    root: Path
    train: list[FolderSample] = field(default_factory=list)
    test: list[FolderSample] = field(default_factory=list)

    def test_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.test:
            key = s.label.defect_group if s.label.defective else "good"
            counts[key] = counts.get(key, 0) + 1
        return counts


def _find_mask(gt_dir: Path, stem: str) -> Path | None:
    for candidate in (gt_dir / f"{stem}_mask.png", gt_dir / f"{stem}.png"):
        if candidate.is_file():
            return candidate
    return None


def read_folder_split(root: str | Path) -> FolderSplit:
    """Parse an MVTec-style split; validates masks for every defect image."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: split root is not a directory")
    split = FolderSplit(root=root)
    for part, bucket in (("train", split.train), ("test", split.test)):
        part_dir = root / part
        if not part_dir.is_dir():
            continue
        for group_dir in sorted(p for p in part_dir.iterdir() if p.is_dir()):
            group = group_dir.name
            for image_path in sorted(group_dir.glob("*.png")):
                rel_id = image_path.relative_to(root).with_suffix("").as_posix()
                if group == "good":
                    bucket.append(FolderSample(id=rel_id, image_path=image_path,
                                               label=ImageLabel.good()))
                    continue
                mask_path = _find_mask(root / "ground_truth" / group, image_path.stem)
                if part == "test" and mask_path is None:
                    raise DataError(
                        f"{image_path}: defect image has no ground-truth mask under "
                        f"{root / 'ground_truth' / group}"
                    )
                bucket.append(FolderSample(id=rel_id, image_path=image_path,
                                           label=ImageLabel.defect(group), mask_path=mask_path))
    if not split.train and not split.test:
        raise DataError(f"{root}: no train/ or test/ images found")
    return split


def write_folder_sample(root: str | Path, part: str, group: str, name: str,
                        pixels: np.ndarray, mask: GroundTruthMask | None = None) -> Path:
    """Write one image (and its mask, when given) into the folder scheme."""
    root = Path(root)
    image_path = root / part / group / f"{name}.png"
    save_png(image_path, pixels)
    if mask is not None:
        save_png(root / "ground_truth" / group / f"{name}_mask.png", mask.to_uint8())
    return image_path


# -- supervised HDF5 container -------------------------------------------------


@dataclass(eq=False)
class ContainerData:
    images: np.ndarray          # N x H x W uint8
    masks: np.ndarray           # N x H x W uint8, 0/255
    modality: str
    seed: int
    real_indices: np.ndarray    # indices of weakly labeled real items
    composition: dict

    @property
    def n_items(self) -> int:
        return self.images.shape[0]

    def labels(self) -> np.ndarray:
        """Image-level defective flags: mask non-zero or flagged real."""
        flags = (self.masks.reshape(self.n_items, -1) > 0).any(axis=1)
        flags[self.real_indices] = True
        return flags


_WRITE_BLOCK = 128


def write_supervised_container(
    items: Iterable[StreamItem],
    path: str | Path,
    modality: str,
    seed: int,
    summary: EpochSummary | dict | None = None,
    compression: str | None = None,
) -> dict:
    """Pack stream items into the chunked container format.

    Items are consumed as an iterable and written in blocks, so epochs larger
    than memory stream straight to disk. Real items carry no mask; they are
    stored with all-zero masks and listed in the `real_item_indices`
    attribute, keeping both datasets aligned. Dataset time tracking is off so
    identical runs produce byte-identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    composition = summary.to_dict() if isinstance(summary, EpochSummary) else dict(summary or {})

    real_indices: list[int] = []
    n = 0
    size: int | None = None
    with h5py.File(path, "w") as f:
        datasets = None
        img_block: list[np.ndarray] = []
        mask_block: list[np.ndarray] = []

        def flush() -> None:
            nonlocal n
            if not img_block:
                return
            images, masks = datasets
            count = len(img_block)
            images.resize(n + count, axis=0)
            masks.resize(n + count, axis=0)
            images[n:n + count] = np.stack(img_block)
            masks[n:n + count] = np.stack(mask_block)
            n += count
            img_block.clear()
            mask_block.clear()

        for i, item in enumerate(items):
            px = item.patch.pixels
            if px.ndim != 2 or px.shape[0] != px.shape[1]:
                raise DataError(f"item {i}: container patches must be square single-channel, "
                                f"got shape {px.shape}")
            if size is None:
                size = px.shape[0]
                datasets = tuple(
                    f.create_dataset(name, shape=(0, size, size), maxshape=(None, size, size),
                                     dtype=np.uint8, chunks=(1, size, size),
                                     compression=compression, track_times=False)
                    for name in (IMAGES_DATASET, MASKS_DATASET)
                )
            if px.shape != (size, size):
                raise DataError(f"item {i}: container patches must be {size}x{size} single-channel, "
                                f"got shape {px.shape}")
            if item.mask is not None and item.mask.pixels.shape != (size, size):
                raise DataError(f"item {i}: mask shape {item.mask.pixels.shape} != patch shape")
            img_block.append(px)
            mask_block.append(item.mask.to_uint8() if item.mask is not None
                              else np.zeros((size, size), np.uint8))
            if item.source == "real":
                real_indices.append(i)
            if len(img_block) >= _WRITE_BLOCK:
                flush()
        if size is None:  # empty epoch: valid container with N = 0
            size = 256
            datasets = tuple(
                f.create_dataset(name, shape=(0, size, size), maxshape=(None, size, size),
                                 dtype=np.uint8, chunks=(1, size, size),
                                 compression=compression, track_times=False)
                for name in (IMAGES_DATASET, MASKS_DATASET)
            )
        flush()
        f.attrs["modality"] = modality
        f.attrs["seed"] = int(seed)
        f.attrs["real_item_indices"] = np.asarray(real_indices, dtype=np.int64)
        f.attrs["composition"] = json.dumps(composition, sort_keys=True)
        f.attrs["container_version"] = CONTAINER_VERSION
        f.attrs["compression"] = compression or "none"
    return {"path": str(path), "n_items": n, "real_items": len(real_indices)}


def set_container_composition(path: str | Path, composition: dict) -> None:
    """Attach the composition summary after a streamed write completes."""
    with h5py.File(path, "a") as f:
        f.attrs["composition"] = json.dumps(composition, sort_keys=True)


def read_supervised_container(path: str | Path) -> ContainerData:
    path = Path(path)
    with h5py.File(path, "r") as f:
        for name in (IMAGES_DATASET, MASKS_DATASET):
            if name not in f:
                raise DataError(f"{path}: container is missing dataset {name!r}")
        images = f[IMAGES_DATASET][...]
        masks = f[MASKS_DATASET][...]
        if images.shape != masks.shape:
            raise DataError(f"{path}: {IMAGES_DATASET} shape {images.shape} != "
                            f"{MASKS_DATASET} shape {masks.shape}")
        return ContainerData(
            images=images,
            masks=masks,
            modality=str(f.attrs.get("modality", "")),
            seed=int(f.attrs.get("seed", 0)),
            real_indices=np.asarray(f.attrs.get("real_item_indices", []), dtype=np.int64),
            composition=json.loads(f.attrs.get("composition", "{}")),
        )


# -- predictions CSV -----------------------------------------------------------


def _load_map(path: Path, expected_shape: tuple[int, int]) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"{path}: anomaly map file not found")
    if path.suffix == ".npy":
        amap = np.load(path)
    else:
        amap = load_png(path).astype(np.float64)
    if amap.ndim != 2 or amap.shape != expected_shape:
        raise DataError(f"{path}: anomaly map shape {amap.shape} != expected {expected_shape}")
    return np.asarray(amap, dtype=np.float64)


def read_predictions(csv_path: str | Path, split: FolderSplit) -> tuple[list[ScoredSample], dict]:
    """Join a predictions CSV (id, score[, map_path]) to a split's ground truth.

    Returns (samples, report) where report lists ids present only in the CSV
    or only in the ground truth. Duplicate ids are an error.
    """
    csv_path = Path(csv_path)
    by_id = {s.id: s for s in split.test}
    rows: dict[str, tuple[float, str]] = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["id", "score"]:
            raise DataError(f"{csv_path}: header must be id,score[,map_path], got {header}")
        has_map = len(header) >= 3 and header[2].strip() == "map_path"
        duplicates = []
        for line_no, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 2:
                raise DataError(f"{csv_path}:{line_no}: expected at least id,score")
            sample_id = row[0].strip()
            if sample_id in rows:
                duplicates.append(sample_id)
                continue
            try:
                score = float(row[1])
            except ValueError as exc:
                raise DataError(f"{csv_path}:{line_no}: score {row[1]!r} is not a number") from exc
            map_path = row[2].strip() if has_map and len(row) > 2 else ""
            rows[sample_id] = (score, map_path)
        if duplicates:
            raise DataError(f"{csv_path}: duplicate ids: {', '.join(sorted(set(duplicates)))}")

    samples: list[ScoredSample] = []
    for sample_id in sorted(rows):
        gt = by_id.get(sample_id)
        if gt is None:
            continue
        score, map_rel = rows[sample_id]
        mask = gt.load_mask()
        anomaly_map = None
        if map_rel:
            shape = load_png(gt.image_path).shape[:2]
            anomaly_map = _load_map((csv_path.parent / map_rel).resolve(), shape)
        samples.append(ScoredSample(
            id=sample_id,
            image_score=score,
            label=gt.label,
            anomaly_map=anomaly_map,
            mask=mask.pixels if mask is not None else None,
        ))
    report = {
        "only_in_csv": sorted(set(rows) - set(by_id)),
        "only_in_ground_truth": sorted(set(by_id) - set(rows)),
    }
    return samples, report


def write_predictions(csv_path: str | Path, rows: Iterable[tuple[str, float]],
                      with_map_column: bool = False) -> None:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score", "map_path"] if with_map_column else ["id", "score"])
        for row in rows:
            writer.writerow(list(row))
