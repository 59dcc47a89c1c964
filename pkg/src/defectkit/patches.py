"""Patch extraction, defect-window cropping, augmentation and preprocessing.

Geometry conventions: a region of interest is (x, y, w, h) in pixel units,
offsets are (x, y) with x = column. Every function that draws randomness
takes an explicit generator and documents its draw order, so per-item seed
paths keep outputs independent of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import AugmentationSpec, PreprocessSpec
from .imagetypes import GroundTruthMask, Patch, ValidationError

PATCH_SIZE = 256
GRID_STRIDE = 160
AUGMENT_RETRIES = 8


def _check_roi(image: np.ndarray, roi: tuple[int, int, int, int], size: int) -> tuple[int, int, int, int]:
    x, y, w, h = (int(v) for v in roi)
    ih, iw = image.shape[:2]
    if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > iw or y + h > ih:
        raise ValidationError(f"roi {roi} does not fit inside image of size {iw}x{ih}")
    if w < size or h < size:
        raise ValidationError(f"roi {roi} is smaller than the patch size {size}")
    return x, y, w, h


def _cut(image: np.ndarray, x: int, y: int, size: int, modality: str, source: str,
         seed_path: tuple[int, ...] = ()) -> Patch:
    return Patch(
        pixels=np.ascontiguousarray(image[y:y + size, x:x + size]),
        modality=modality,
        source=source,
        offset=(x, y),
        seed_path=seed_path,
    )


def extract_random_patches(
    image: np.ndarray,
    roi: tuple[int, int, int, int],
    n: int,
    rng: np.random.Generator,
    size: int = PATCH_SIZE,
    modality: str = "lsm1",
    source: str = "",
) -> list[Patch]:
    """n patches at uniformly random positions keeping the patch inside roi.

    Draws the x offsets as one batch, then the y offsets.
    """
    x, y, w, h = _check_roi(image, roi, size)
    xs = rng.integers(0, w - size + 1, size=n)
    ys = rng.integers(0, h - size + 1, size=n)
    return [_cut(image, x + int(dx), y + int(dy), size, modality, source) for dx, dy in zip(xs, ys)]


def grid_offsets(extent: int, size: int, stride: int) -> list[int]:
    """Sliding-window offsets along one axis, with a final patch flush to the
    edge when the stride grid does not land on it."""
    if extent < size:
        raise ValidationError(f"extent {extent} is smaller than the patch size {size}")
    offsets = list(range(0, extent - size + 1, stride))
    if offsets[-1] != extent - size:
        offsets.append(extent - size)
    return offsets


def extract_grid_patches(
    image: np.ndarray,
    roi: tuple[int, int, int, int],
    stride: int = GRID_STRIDE,
    size: int = PATCH_SIZE,
    modality: str = "lsm1",
    source: str = "",
) -> list[Patch]:
    """Overlapping sliding-window patches covering the roi completely.

    Row-major order: y offsets outer, x offsets inner.
    """
    x, y, w, h = _check_roi(image, roi, size)
    return [
        _cut(image, x + dx, y + dy, size, modality, source)
        for dy in grid_offsets(h, size, stride)
        for dx in grid_offsets(w, size, stride)
    ]


def crop_offset_bounds(raw_size: int, size: int) -> tuple[int, int]:
    """Inclusive offset band for the defect-window crop.

    For 512 -> 256 this is [64, 192], which guarantees the crop contains the
    central 128x128 neighborhood of a centrally labeled defect.
    """
    span = raw_size - size
    return span // 4, 3 * span // 4


def crop_defect_window(raw: Patch, rng: np.random.Generator, size: int = PATCH_SIZE) -> Patch:
    """Random crop of a centrally labeled raw defect patch.

    Draws the x offset, then the y offset, uniformly over the allowed band.
    """
    if raw.height != raw.width or raw.height <= size:
        raise ValidationError(f"raw defect patch must be square and larger than {size}, got "
                              f"{raw.height}x{raw.width}")
    lo, hi = crop_offset_bounds(raw.height, size)
    dx = int(rng.integers(lo, hi + 1))
    dy = int(rng.integers(lo, hi + 1))
    cropped = np.ascontiguousarray(raw.pixels[dy:dy + size, dx:dx + size])
    return Patch(
        pixels=cropped,
        modality=raw.modality,
        source=raw.source,
        offset=(raw.offset[0] + dx, raw.offset[1] + dy),
        seed_path=raw.seed_path,
    )


@dataclass(frozen=True)
class TransformDraw:
    """One realized augmentation: affine parameters plus illumination factors."""

    rotation_deg: float
    scale: float
    shear_deg: float
    v_flip: bool
    h_flip: bool
    brightness: float | None
    contrast: float | None

    @property
    def affine_is_identity(self) -> bool:
        return (self.rotation_deg == 0.0 and self.scale == 1.0 and self.shear_deg == 0.0
                and not self.v_flip and not self.h_flip)


def draw_transform(spec: AugmentationSpec, rng: np.random.Generator) -> TransformDraw | None:
    """Draw whether and how to augment. None means the patch passes unchanged.

    Draw order: apply gate, rotation, scale, shear, v-flip, h-flip, then
    brightness and contrast (each only when configured).
    """
    if rng.random() >= spec.apply_prob:
        return None
    rotation = float(rng.uniform(-spec.rotation_deg, spec.rotation_deg))
    scale = float(rng.uniform(*spec.scale))
    shear = float(rng.uniform(-spec.shear_deg, spec.shear_deg))
    v_flip = bool(spec.v_flip and rng.random() < 0.5)
    h_flip = bool(spec.h_flip and rng.random() < 0.5)
    brightness = float(rng.uniform(*spec.brightness)) if spec.brightness is not None else None
    contrast = float(rng.uniform(*spec.contrast)) if spec.contrast is not None else None
    return TransformDraw(rotation, scale, shear, v_flip, h_flip, brightness, contrast)


def _affine_matrix(draw: TransformDraw, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Inverse (output -> input) mapping for scipy's affine_transform, composed
    about the patch center in (row, col) coordinates."""
    theta = math.radians(draw.rotation_deg)
    phi = math.radians(draw.shear_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shear = np.array([[1.0, 0.0], [math.tan(phi), 1.0]])
    scale = np.eye(2) * draw.scale
    flip = np.diag([-1.0 if draw.v_flip else 1.0, -1.0 if draw.h_flip else 1.0])
    forward = flip @ rot @ shear @ scale
    inverse = np.linalg.inv(forward)
    center = (np.asarray(shape, dtype=float) - 1.0) / 2.0
    offset = center - inverse @ center
    return inverse, offset


def _warp(pixels: np.ndarray, matrix: np.ndarray, offset: np.ndarray, order: int) -> np.ndarray:
    return ndimage.affine_transform(pixels, matrix, offset=offset, order=order, mode="reflect",
                                    output=np.float32)


def _apply_illumination(pixels: np.ndarray, draw: TransformDraw) -> np.ndarray:
    out = pixels
    if draw.brightness is not None:
        out = np.clip(out * draw.brightness, 0.0, 255.0)
    if draw.contrast is not None:
        mean = float(out.mean())
        out = np.clip((out - mean) * draw.contrast + mean, 0.0, 255.0)
    return out


def _apply_transform(patch: Patch, mask: GroundTruthMask | None, draw: TransformDraw) -> tuple[Patch, GroundTruthMask | None]:
    pixels = patch.pixels.astype(np.float32)
    out_mask = mask
    if not draw.affine_is_identity:
        matrix, offset = _affine_matrix(draw, pixels.shape)
        pixels = np.clip(_warp(pixels, matrix, offset, order=1), 0.0, 255.0)
        if mask is not None:
            warped = _warp(mask.pixels.astype(np.float32), matrix, offset, order=0)
            out_mask = GroundTruthMask(warped > 0.5)
    pixels = _apply_illumination(pixels, draw)
    out = patch.with_pixels(np.rint(pixels).astype(np.uint8))
    return out, out_mask


def augment(patch: Patch, spec: AugmentationSpec, rng: np.random.Generator) -> Patch:
    """Randomly augment a patch per the modality's augmentation row."""
    draw = draw_transform(spec, rng)
    if draw is None:
        return patch
    out, _ = _apply_transform(patch, None, draw)
    return out


def augment_pair(
    patch: Patch,
    mask: GroundTruthMask,
    spec: AugmentationSpec,
    rng: np.random.Generator,
) -> tuple[Patch, GroundTruthMask]:
    """Augment a (patch, mask) pair with one shared affine map.

    A defective pair never comes back mask-empty: if the warp pushes all
    positive pixels out, the transform is redrawn (bounded), falling back to
    the untransformed pair.
    """
    draw = draw_transform(spec, rng)
    if draw is None:
        return patch, mask
    for _ in range(AUGMENT_RETRIES):
        out_patch, out_mask = _apply_transform(patch, mask, draw)
        if mask.empty or not out_mask.empty:
            return out_patch, out_mask
        draw = draw_transform(spec, rng)
        if draw is None:
            return patch, mask
    return patch, mask


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    kernel = np.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def preprocess_pixels(pixels: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    """Brightness scaling (clamped) followed by the separable gaussian smooth.

    Order is fixed: clamping happens before smoothing, so saturated pixels
    smear their clamped value.
    """
    if pixels.ndim != 2:
        raise ValidationError("preprocess expects single-channel pixels")
    out = np.clip(pixels.astype(np.float64) * spec.brightness_factor, 0.0, 255.0)
    kernel = _gaussian_kernel(spec.smooth_kernel, spec.smooth_sigma)
    out = ndimage.correlate1d(out, kernel, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    return np.rint(np.clip(out, 0.0, 255.0)).astype(np.uint8)


def preprocess(patch: Patch, spec: PreprocessSpec) -> Patch:
    """Model-input preprocessing of a patch (single-channel form)."""
    gray = patch.gray()
    return gray.with_pixels(preprocess_pixels(gray.pixels, spec))
