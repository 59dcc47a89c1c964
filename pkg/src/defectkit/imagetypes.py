"""Shared value types for patches, masks and image-level labels."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

MODALITY_IDS = ("lsm1", "lsm2", "asm")
DEFECT_GROUPS = ("points", "area", "synthetic")
PATCH_SIZES = (256, 512)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ValidationError(ValueError):
    """A value object violates one of its invariants."""


def to_gray(pixels: np.ndarray) -> np.ndarray:
    """Collapse an HxWx3 uint8 image to single channel by luminance weighting."""
    if pixels.ndim == 2:
        return pixels
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValidationError(f"expected HxW or HxWx3 pixels, got shape {pixels.shape}")
    r, g, b = LUMA_WEIGHTS
    gray = pixels[..., 0] * r + pixels[..., 1] * g + pixels[..., 2] * b
    return np.rint(gray).clip(0, 255).astype(np.uint8)


@dataclass(frozen=True)
class ImageLabel:
    """Image-level label: good, or defective with a defect group."""

    defective: bool
    defect_group: str | None = None

    def __post_init__(self) -> None:
        if self.defective:
            if self.defect_group not in DEFECT_GROUPS:
                raise ValidationError(
                    f"defective label needs a defect_group in {DEFECT_GROUPS}, got {self.defect_group!r}"
                )
        elif self.defect_group is not None:
            raise ValidationError("good label must not carry a defect_group")

    @classmethod
    def good(cls) -> "ImageLabel":
        return cls(defective=False)

    @classmethod
    def defect(cls, group: str) -> "ImageLabel":
        return cls(defective=True, defect_group=group)


@dataclass(eq=False)
class Patch:
    """A fixed-size 8-bit image tile with provenance metadata.

    pixels is HxW (single channel) or HxWx3; H and W are 256 or 512.
    offset is the (x, y) top-left position in the source acquisition.
    seed_path identifies the random decisions that produced the patch.
    """

    pixels: np.ndarray
    modality: str = "lsm1"
    source: str = ""
    offset: tuple[int, int] = (0, 0)
    seed_path: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise ValidationError(f"patch pixels must be uint8, got {px.dtype}")
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] != 3):
            raise ValidationError(f"patch pixels must be HxW or HxWx3, got shape {px.shape}")
        h, w = px.shape[:2]
        if h not in PATCH_SIZES or w not in PATCH_SIZES:
            raise ValidationError(f"patch sides must be in {PATCH_SIZES}, got {h}x{w}")
        if self.modality not in MODALITY_IDS:
            raise ValidationError(f"unknown modality {self.modality!r}")
        if self.offset[0] < 0 or self.offset[1] < 0:
            raise ValidationError(f"origin offsets must be non-negative, got {self.offset}")
        self.pixels = px
        self.seed_path = tuple(self.seed_path)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else self.pixels.shape[2]

    def with_pixels(self, pixels: np.ndarray, seed_path: tuple[int, ...] | None = None) -> "Patch":
        """Copy of the patch with new pixel data, keeping provenance."""
        return replace(self, pixels=pixels, seed_path=self.seed_path if seed_path is None else seed_path)

    def gray(self) -> "Patch":
        """Single-channel view of the patch (luminance conversion when rgb)."""
        if self.pixels.ndim == 2:
            return self
        return self.with_pixels(to_gray(self.pixels))


@dataclass(eq=False)
class GroundTruthMask:
    """Per-pixel binary defect annotation aligned to a patch."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValidationError(f"mask must be HxW, got shape {px.shape}")
        self.pixels = px.astype(bool)

    @property
    def positive_pixel_count(self) -> int:
        return int(np.count_nonzero(self.pixels))

    @property
    def empty(self) -> bool:
        return self.positive_pixel_count == 0

    def matches(self, patch: Patch) -> bool:
        return self.pixels.shape == patch.pixels.shape[:2]

    def to_uint8(self) -> np.ndarray:
        """0/255 uint8 encoding used by PNG masks and the container format."""
        return np.where(self.pixels, 255, 0).astype(np.uint8)

    @classmethod
    def zeros(cls, height: int, width: int) -> "GroundTruthMask":
        return cls(np.zeros((height, width), dtype=bool))
