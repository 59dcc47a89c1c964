"""Synthetic defect textures: a stochastic walk with momentum deposits a
brushed intensity delta onto fault-free patches, yielding pixel-exact masks.

Texture model "walk-v1": one signed amplitude per texture, additive blending
with saturating 8-bit arithmetic, support thresholded at |delta| >= tau.
Manifests record the model name so downstream tooling can detect changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .config import SynthesisRanges
from .imagetypes import GroundTruthMask, Patch, ValidationError

TEXTURE_MODEL = "walk-v1"
MAX_RETRIES = 8


class SynthesisError(RuntimeError):
    """Synthesis failed to produce a usable defect within the retry budget."""


@dataclass(frozen=True)
class SynthesisParams:
    """Concrete parameters for one defect texture.

    brush_radius and intensity_delta stay ranges: the radius is redrawn per
    step, the signed amplitude once per texture.
    """

    n_steps: int
    momentum: float
    turn_sigma: float
    brush_radius: tuple[float, float]
    intensity_delta: tuple[int, int]
    polarity: str
    falloff: str
    mask_threshold: int
    center_box: tuple[int, int, int, int]  # x0, y0, x1, y1 half-open

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValidationError(f"n_steps must be >= 1, got {self.n_steps}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.mask_threshold < 1:
            raise ValidationError(f"mask_threshold must be >= 1, got {self.mask_threshold}")
        if self.brush_radius[0] > self.brush_radius[1] or self.brush_radius[0] <= 0:
            raise ValidationError(f"bad brush_radius range {self.brush_radius}")
        lo, hi = self.intensity_delta
        if lo > hi or lo < -255 or hi > 255:
            raise ValidationError(f"intensity_delta range must lie in [-255, 255], got {self.intensity_delta}")
        x0, y0, x1, y1 = self.center_box
        if not (x0 < x1 and y0 < y1):
            raise ValidationError(f"degenerate center_box {self.center_box}")

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["texture_model"] = TEXTURE_MODEL
        return rec


@dataclass(eq=False)
class DefectTexture:
    """Signed intensity field plus its thresholded support."""

    delta: np.ndarray   # HxW float32
    support: np.ndarray  # HxW bool, exactly |delta| >= threshold
    threshold: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.delta.shape


def sample_params(ranges: SynthesisRanges, patch_size: int, rng: np.random.Generator) -> SynthesisParams:
    """Draw texture parameters uniformly from a modality's configured ranges.

    Draw order is fixed: n_steps, momentum, turn_sigma, two brush radii,
    polarity sign (mixed only). Collapsed ranges reproduce their values.
    """
    n_steps = int(rng.integers(ranges.n_steps[0], ranges.n_steps[1] + 1))
    momentum = float(rng.uniform(*ranges.momentum))
    turn_sigma = float(rng.uniform(*ranges.turn_sigma))
    r_a, r_b = rng.uniform(ranges.brush_radius[0], ranges.brush_radius[1], size=2)
    brush = (float(min(r_a, r_b)), float(max(r_a, r_b)))
    lo, hi = ranges.intensity
    if ranges.polarity == "bright":
        delta_range = (lo, hi)
    elif ranges.polarity == "dark":
        delta_range = (-hi, -lo)
    else:
        sign = 1 if rng.random() < 0.5 else -1
        delta_range = (lo, hi) if sign > 0 else (-hi, -lo)
    cb_lo = int(round(ranges.center_box[0] * patch_size))
    cb_hi = max(cb_lo + 1, int(round(ranges.center_box[1] * patch_size)))
    return SynthesisParams(
        n_steps=n_steps,
        momentum=momentum,
        turn_sigma=turn_sigma,
        brush_radius=brush,
        intensity_delta=delta_range,
        polarity=ranges.polarity,
        falloff=ranges.falloff,
        mask_threshold=ranges.mask_threshold,
        center_box=(cb_lo, cb_lo, cb_hi, cb_hi),
    )


def _stamp(delta: np.ndarray, x: float, y: float, radius: float, amplitude: float, falloff: str) -> None:
    """Deposit one brush footprint centered at (x, y) into the delta field.

    Covered pixels are those whose center lies strictly within `radius`,
    so radius 1 at an integer position touches exactly one pixel.
    """
    size_y, size_x = delta.shape
    x_lo = max(0, int(math.ceil(x - radius)))
    x_hi = min(size_x - 1, int(math.floor(x + radius)))
    y_lo = max(0, int(math.ceil(y - radius)))
    y_hi = min(size_y - 1, int(math.floor(y + radius)))
    if x_lo > x_hi or y_lo > y_hi:
        return
    ys = np.arange(y_lo, y_hi + 1, dtype=np.float32) - y
    xs = np.arange(x_lo, x_hi + 1, dtype=np.float32) - x
    d2 = ys[:, None] ** 2 + xs[None, :] ** 2
    inside = d2 < radius * radius
    if falloff == "hard":
        deposit = np.where(inside, np.float32(amplitude), np.float32(0.0))
    else:
        sigma = radius / 2.0
        deposit = np.where(inside, amplitude * np.exp(-d2 / (2.0 * sigma * sigma)), 0.0).astype(np.float32)
    delta[y_lo:y_hi + 1, x_lo:x_hi + 1] += deposit


def _walk_once(params: SynthesisParams, patch_size: int, rng: np.random.Generator) -> np.ndarray:
    x0, y0, x1, y1 = params.center_box
    if not (0 <= x0 and x1 <= patch_size and 0 <= y0 and y1 <= patch_size):
        raise ValidationError(f"center_box {params.center_box} exceeds patch bounds {patch_size}")
    delta = np.zeros((patch_size, patch_size), dtype=np.float32)
    # Fixed draw order: start x, start y, heading, amplitude, then per step
    # (radius, heading noise).
    x = float(rng.integers(x0, x1))
    y = float(rng.integers(y0, y1))
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    direction = np.array([math.cos(angle), math.sin(angle)])
    lo, hi = params.intensity_delta
    amplitude = float(rng.integers(lo, hi + 1))
    r_lo, r_hi = params.brush_radius
    for _ in range(params.n_steps):
        radius = float(rng.uniform(r_lo, r_hi))
        _stamp(delta, x, y, radius, amplitude, params.falloff)
        noise = float(rng.normal(0.0, params.turn_sigma))
        proposal = angle + noise
        blended = params.momentum * direction + (1.0 - params.momentum) * np.array(
            [math.cos(proposal), math.sin(proposal)]
        )
        norm = float(np.hypot(blended[0], blended[1]))
        if norm > 1e-12:
            direction = blended / norm
            angle = math.atan2(direction[1], direction[0])
        x += direction[0]
        y += direction[1]
    np.clip(delta, -255.0, 255.0, out=delta)
    return delta


def walk_texture(params: SynthesisParams, patch_size: int, rng: np.random.Generator) -> DefectTexture:
    """Run the stochastic walk; retries with fresh sub-seeds when the
    thresholded support comes up empty, then errors."""
    for attempt_rng in rng.spawn(MAX_RETRIES):
        delta = _walk_once(params, patch_size, attempt_rng)
        support = np.abs(delta) >= params.mask_threshold
        if support.any():
            return DefectTexture(delta=delta, support=support, threshold=params.mask_threshold)
    raise SynthesisError(f"empty support after {MAX_RETRIES} walk attempts (params {params})")


def apply_defect(patch: Patch, texture: DefectTexture) -> tuple[Patch, GroundTruthMask]:
    """Blend a texture into a patch with saturating 8-bit arithmetic.

    The mask is exact: a pixel is marked iff it lies in the texture support
    and its output value actually differs from the input.
    """
    base = patch.pixels
    if base.ndim != 2:
        raise ValidationError("apply_defect expects a single-channel patch")
    if base.shape != texture.shape:
        raise ValidationError(f"patch shape {base.shape} != texture shape {texture.shape}")
    out = np.clip(np.rint(base.astype(np.float32) + texture.delta), 0, 255).astype(np.uint8)
    mask = (out != base) & texture.support
    return patch.with_pixels(out), GroundTruthMask(mask)


def synthesize_detailed(
    patch: Patch,
    ranges: SynthesisRanges,
    rng: np.random.Generator,
) -> tuple[Patch, GroundTruthMask, SynthesisParams, DefectTexture]:
    """Sample params, walk a texture and blend it in, retrying (bounded) when
    the resulting mask is empty (e.g. washed out by saturation)."""
    last_error: Exception | None = None
    for attempt_rng in rng.spawn(MAX_RETRIES):
        params = sample_params(ranges, patch.pixels.shape[0], attempt_rng)
        try:
            texture = walk_texture(params, patch.pixels.shape[0], attempt_rng)
        except SynthesisError as exc:
            last_error = exc
            continue
        defective, mask = apply_defect(patch, texture)
        if not mask.empty:
            return defective, mask, params, texture
        last_error = SynthesisError("synthesis produced an empty mask (saturated blend)")
    raise SynthesisError(f"no usable defect after {MAX_RETRIES} attempts: {last_error}")


def synthesize(
    patch: Patch,
    ranges: SynthesisRanges,
    rng: np.random.Generator,
) -> tuple[Patch, GroundTruthMask, SynthesisParams]:
    defective, mask, params, _texture = synthesize_detailed(patch, ranges, rng)
    return defective, mask, params
