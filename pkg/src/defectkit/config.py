"""Pipeline configuration: schema, defaults, validation and (de)serialization.

The on-disk format is a YAML mapping documented in docs/config_schema.md.
An empty file is a valid config: every field has a default. Probabilities
that the pipeline treats as exact rationals (injection probability,
synthesis rate, fraction schedule) accept "a/b" strings and are kept as
fractions.Fraction internally.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import yaml

from .imagetypes import MODALITY_IDS
from .rng import DEFAULT_MASTER_SEED


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def parse_rational(value, field_name: str) -> Fraction:
    try:
        if isinstance(value, str):
            return Fraction(value.strip())
        if isinstance(value, (int, Fraction)):
            return Fraction(value)
        if isinstance(value, float):
            return Fraction(value).limit_denominator(1_000_000)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{field_name}: cannot parse rational from {value!r}") from exc
    raise ConfigError(f"{field_name}: cannot parse rational from {value!r}")


def _format_rational(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}" if value.denominator != 1 else str(value.numerator)


def _pair(value, field_name: str, kind=float) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{field_name}: expected a [min, max] pair, got {value!r}")
    lo, hi = kind(value[0]), kind(value[1])
    if lo > hi:
        raise ConfigError(f"{field_name}: range is not ordered ({lo} > {hi})")
    return (lo, hi)


@dataclass(frozen=True)
class PreprocessSpec:
    """Model-input preprocessing: brightness scaling then weak gaussian smoothing."""

    brightness_factor: float = 1.0
    smooth_kernel: int = 3
    smooth_sigma: float = 1.0

    def validate(self, prefix: str) -> None:
        if self.smooth_kernel % 2 != 1 or self.smooth_kernel < 1:
            raise ConfigError(f"{prefix}.smooth_kernel: must be odd and positive, got {self.smooth_kernel}")
        if self.smooth_sigma <= 0:
            raise ConfigError(f"{prefix}.smooth_sigma: must be > 0, got {self.smooth_sigma}")
        if self.brightness_factor <= 0:
            raise ConfigError(f"{prefix}.brightness_factor: must be > 0, got {self.brightness_factor}")


@dataclass(frozen=True)
class AugmentationSpec:
    """One modality row of the affine/illumination augmentation table.

    rotation_deg and shear_deg are symmetric ranges (draws in [-v, +v]);
    scale, brightness and contrast are (min, max) multiplicative ranges;
    brightness/contrast None disables illumination transforms entirely.
    """

    rotation_deg: float = 45.0
    scale: tuple[float, float] = (0.90, 1.10)
    shear_deg: float = 10.0
    v_flip: bool = True
    h_flip: bool = True
    brightness: tuple[float, float] | None = (0.75, 1.25)
    contrast: tuple[float, float] | None = (0.75, 1.25)
    apply_prob: float = 0.90

    def validate(self, prefix: str) -> None:
        if self.rotation_deg < 0:
            raise ConfigError(f"{prefix}.rotation_deg: must be >= 0")
        if self.shear_deg < 0:
            raise ConfigError(f"{prefix}.shear_deg: must be >= 0")
        for name, rng in (("scale", self.scale), ("brightness", self.brightness), ("contrast", self.contrast)):
            if rng is not None and rng[0] > rng[1]:
                raise ConfigError(f"{prefix}.{name}: range is not ordered")
        if self.scale[0] <= 0:
            raise ConfigError(f"{prefix}.scale: must be positive")
        if not 0.80 <= self.apply_prob <= 0.95:
            raise ConfigError(
                f"{prefix}.apply_prob: must lie in [0.80, 0.95], got {self.apply_prob}"
            )


@dataclass(frozen=True)
class SynthesisRanges:
    """Parameter ranges the defect-texture sampler draws from, per modality.

    * n_steps: walk length range (inclusive).
    * momentum: direction-persistence coefficient range, within [0, 1).
    * turn_sigma: per-step heading noise (radians) range.
    * brush_radius: range the per-step deposit radius is drawn from.
    * intensity: unsigned amplitude range; polarity resolves the sign
      (bright = added, dark = subtracted, mixed = either).
    * falloff: "hard" (flat disc) or "gaussian" deposit profile.
    * mask_threshold: |delta| at or above which a pixel counts as defect.
    * center_box: fractional box of the patch the walk starts inside.
    """

    n_steps: tuple[int, int] = (1, 300)
    momentum: tuple[float, float] = (0.0, 0.95)
    turn_sigma: tuple[float, float] = (0.05, 0.6)
    brush_radius: tuple[float, float] = (1.0, 4.0)
    intensity: tuple[int, int] = (20, 120)
    polarity: str = "mixed"
    falloff: str = "gaussian"
    mask_threshold: int = 8
    center_box: tuple[float, float] = (0.25, 0.75)

    def validate(self, prefix: str) -> None:
        if self.n_steps[0] < 1:
            raise ConfigError(f"{prefix}.n_steps: walk length must be >= 1")
        if not (0 <= self.momentum[0] and self.momentum[1] < 1):
            raise ConfigError(f"{prefix}.momentum: must lie in [0, 1)")
        if self.turn_sigma[0] < 0:
            raise ConfigError(f"{prefix}.turn_sigma: must be >= 0")
        if self.brush_radius[0] <= 0:
            raise ConfigError(f"{prefix}.brush_radius: must be > 0")
        if not (0 <= self.intensity[0] <= self.intensity[1] <= 255):
            raise ConfigError(f"{prefix}.intensity: amplitude must lie in [0, 255]")
        if self.polarity not in ("bright", "dark", "mixed"):
            raise ConfigError(f"{prefix}.polarity: must be bright, dark or mixed")
        if self.falloff not in ("hard", "gaussian"):
            raise ConfigError(f"{prefix}.falloff: must be hard or gaussian")
        if self.mask_threshold < 1:
            raise ConfigError(f"{prefix}.mask_threshold: must be >= 1")
        if not (0.0 <= self.center_box[0] < self.center_box[1] <= 1.0):
            raise ConfigError(f"{prefix}.center_box: must satisfy 0 <= lo < hi <= 1")


@dataclass(frozen=True)
class ModalityConfig:
    """Per-modality settings: channel layout, preprocessing, augmentation, synthesis."""

    id: str
    channels: int
    preprocess: PreprocessSpec
    augmentation: AugmentationSpec
    synthesis: SynthesisRanges
    border_crop: int = 0

    def validate(self) -> None:
        prefix = f"modalities.{self.id}"
        if self.id not in MODALITY_IDS:
            raise ConfigError(f"{prefix}: unknown modality id")
        if self.channels not in (1, 3):
            raise ConfigError(f"{prefix}.channels: must be 1 or 3, got {self.channels}")
        if self.border_crop < 0:
            raise ConfigError(f"{prefix}.border_crop: must be >= 0")
        self.preprocess.validate(f"{prefix}.preprocess")
        self.augmentation.validate(f"{prefix}.augmentation")
        self.synthesis.validate(f"{prefix}.synthesis")


def _default_modalities() -> dict[str, ModalityConfig]:
    illum = (0.75, 1.25)
    return {
        "lsm1": ModalityConfig(
            id="lsm1",
            channels=3,
            preprocess=PreprocessSpec(brightness_factor=1.5),
            augmentation=AugmentationSpec(rotation_deg=45.0, scale=(0.90, 1.10), shear_deg=10.0,
                                          brightness=illum, contrast=illum),
            synthesis=SynthesisRanges(),
        ),
        "lsm2": ModalityConfig(
            id="lsm2",
            channels=3,
            preprocess=PreprocessSpec(),
            augmentation=AugmentationSpec(rotation_deg=45.0, scale=(0.90, 1.10), shear_deg=20.0,
                                          brightness=illum, contrast=illum),
            synthesis=SynthesisRanges(),
        ),
        "asm": ModalityConfig(
            id="asm",
            channels=1,
            preprocess=PreprocessSpec(),
            augmentation=AugmentationSpec(rotation_deg=10.0, scale=(1.0, 1.2), shear_deg=10.0,
                                          brightness=None, contrast=None),
            synthesis=SynthesisRanges(brush_radius=(1.0, 3.0), intensity=(25, 110)),
            border_crop=4,
        ),
    }


DEFAULT_FRACTIONS = (Fraction(1, 16), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2), Fraction(1))


@dataclass(frozen=True)
class PipelineConfig:
    """Validated top-level configuration shared by all pipeline stages."""

    master_seed: int = DEFAULT_MASTER_SEED
    p_inject: Fraction = Fraction(1, 32)
    r_syn: Fraction = Fraction(1, 2)
    patch_size: int = 256
    stride: int = 160
    raw_defect_size: int = 512
    fractions: tuple[Fraction, ...] = DEFAULT_FRACTIONS
    allow_extreme_injection: bool = False
    modalities: dict[str, ModalityConfig] = field(default_factory=_default_modalities)

    def validate(self) -> None:
        if self.master_seed < 0:
            raise ConfigError(f"master_seed: must be >= 0, got {self.master_seed}")
        if not (0 <= self.p_inject < Fraction(1, 2)) and not self.allow_extreme_injection:
            raise ConfigError(
                f"p_inject: must satisfy 0 <= p_inject < 1/2 (got {self.p_inject}); "
                "set allow_extreme_injection to force"
            )
        if self.allow_extreme_injection and not (0 <= self.p_inject <= 1):
            raise ConfigError(f"p_inject: must lie in [0, 1], got {self.p_inject}")
        if not (0 < self.r_syn <= 1):
            raise ConfigError(f"r_syn: must satisfy 0 < r_syn <= 1, got {self.r_syn}")
        if self.patch_size < 1:
            raise ConfigError("patch_size: must be positive")
        if not (1 <= self.stride <= self.patch_size):
            raise ConfigError(
                f"stride: must satisfy 1 <= stride <= patch_size ({self.patch_size}), got {self.stride}"
            )
        if self.raw_defect_size < self.patch_size:
            raise ConfigError("raw_defect_size: must be >= patch_size")
        for f in self.fractions:
            if not (0 < f <= 1):
                raise ConfigError(f"fractions: every fraction must lie in (0, 1], got {f}")
        if list(self.fractions) != sorted(self.fractions):
            raise ConfigError("fractions: must be sorted ascending")
        for mod in self.modalities.values():
            mod.validate()

    def modality(self, modality_id: str) -> ModalityConfig:
        try:
            return self.modalities[modality_id]
        except KeyError:
            raise ConfigError(f"modalities.{modality_id}: no settings configured") from None

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        cfg = replace(self, **kwargs)
        cfg.validate()
        return cfg

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        def aug(a: AugmentationSpec) -> dict:
            return {
                "rotation_deg": a.rotation_deg,
                "scale": list(a.scale),
                "shear_deg": a.shear_deg,
                "v_flip": a.v_flip,
                "h_flip": a.h_flip,
                "brightness": list(a.brightness) if a.brightness else None,
                "contrast": list(a.contrast) if a.contrast else None,
                "apply_prob": a.apply_prob,
            }

        def synth(s: SynthesisRanges) -> dict:
            return {
                "n_steps": list(s.n_steps),
                "momentum": list(s.momentum),
                "turn_sigma": list(s.turn_sigma),
                "brush_radius": list(s.brush_radius),
                "intensity": list(s.intensity),
                "polarity": s.polarity,
                "falloff": s.falloff,
                "mask_threshold": s.mask_threshold,
                "center_box": list(s.center_box),
            }

        return {
            "master_seed": self.master_seed,
            "p_inject": _format_rational(self.p_inject),
            "r_syn": _format_rational(self.r_syn),
            "patch_size": self.patch_size,
            "stride": self.stride,
            "raw_defect_size": self.raw_defect_size,
            "fractions": [_format_rational(f) for f in self.fractions],
            "allow_extreme_injection": self.allow_extreme_injection,
            "modalities": {
                mid: {
                    "channels": m.channels,
                    "border_crop": m.border_crop,
                    "preprocess": {
                        "brightness_factor": m.preprocess.brightness_factor,
                        "smooth_kernel": m.preprocess.smooth_kernel,
                        "smooth_sigma": m.preprocess.smooth_sigma,
                    },
                    "augmentation": aug(m.augmentation),
                    "synthesis": synth(m.synthesis),
                }
                for mid, m in sorted(self.modalities.items())
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _modality_from_dict(mid: str, raw: dict, base: ModalityConfig) -> ModalityConfig:
    prefix = f"modalities.{mid}"
    pre_raw = raw.get("preprocess", {})
    pre = PreprocessSpec(
        brightness_factor=float(pre_raw.get("brightness_factor", base.preprocess.brightness_factor)),
        smooth_kernel=int(pre_raw.get("smooth_kernel", base.preprocess.smooth_kernel)),
        smooth_sigma=float(pre_raw.get("smooth_sigma", base.preprocess.smooth_sigma)),
    )
    aug_raw = raw.get("augmentation", {})
    b = base.augmentation
    aug = AugmentationSpec(
        rotation_deg=float(aug_raw.get("rotation_deg", b.rotation_deg)),
        scale=_pair(aug_raw["scale"], f"{prefix}.augmentation.scale") if "scale" in aug_raw else b.scale,
        shear_deg=float(aug_raw.get("shear_deg", b.shear_deg)),
        v_flip=bool(aug_raw.get("v_flip", b.v_flip)),
        h_flip=bool(aug_raw.get("h_flip", b.h_flip)),
        brightness=(_pair(aug_raw["brightness"], f"{prefix}.augmentation.brightness")
                    if aug_raw.get("brightness") is not None else None)
        if "brightness" in aug_raw else b.brightness,
        contrast=(_pair(aug_raw["contrast"], f"{prefix}.augmentation.contrast")
                  if aug_raw.get("contrast") is not None else None)
        if "contrast" in aug_raw else b.contrast,
        apply_prob=float(aug_raw.get("apply_prob", b.apply_prob)),
    )
    syn_raw = raw.get("synthesis", {})
    s = base.synthesis
    syn = SynthesisRanges(
        n_steps=_pair(syn_raw["n_steps"], f"{prefix}.synthesis.n_steps", int) if "n_steps" in syn_raw else s.n_steps,
        momentum=_pair(syn_raw["momentum"], f"{prefix}.synthesis.momentum") if "momentum" in syn_raw else s.momentum,
        turn_sigma=_pair(syn_raw["turn_sigma"], f"{prefix}.synthesis.turn_sigma")
        if "turn_sigma" in syn_raw else s.turn_sigma,
        brush_radius=_pair(syn_raw["brush_radius"], f"{prefix}.synthesis.brush_radius")
        if "brush_radius" in syn_raw else s.brush_radius,
        intensity=_pair(syn_raw["intensity"], f"{prefix}.synthesis.intensity", int)
        if "intensity" in syn_raw else s.intensity,
        polarity=str(syn_raw.get("polarity", s.polarity)),
        falloff=str(syn_raw.get("falloff", s.falloff)),
        mask_threshold=int(syn_raw.get("mask_threshold", s.mask_threshold)),
        center_box=_pair(syn_raw["center_box"], f"{prefix}.synthesis.center_box")
        if "center_box" in syn_raw else s.center_box,
    )
    return ModalityConfig(
        id=mid,
        channels=int(raw.get("channels", base.channels)),
        preprocess=pre,
        augmentation=aug,
        synthesis=syn,
        border_crop=int(raw.get("border_crop", base.border_crop)),
    )


_TOP_LEVEL_KEYS = {
    "master_seed", "p_inject", "r_syn", "patch_size", "stride", "raw_defect_size",
    "fractions", "allow_extreme_injection", "modalities",
}


def config_from_dict(raw: dict | None) -> PipelineConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root: expected a mapping, got {type(raw).__name__}")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    defaults = _default_modalities()
    mod_raw = raw.get("modalities", {})
    if not isinstance(mod_raw, dict):
        raise ConfigError("modalities: expected a mapping")
    unknown_mods = set(mod_raw) - set(defaults)
    if unknown_mods:
        raise ConfigError(f"modalities: unknown modality ids: {', '.join(sorted(unknown_mods))}")
    modalities = {
        mid: _modality_from_dict(mid, mod_raw.get(mid, {}), base) for mid, base in defaults.items()
    }
    cfg = PipelineConfig(
        master_seed=int(raw.get("master_seed", DEFAULT_MASTER_SEED)),
        p_inject=parse_rational(raw.get("p_inject", Fraction(1, 32)), "p_inject"),
        r_syn=parse_rational(raw.get("r_syn", Fraction(1, 2)), "r_syn"),
        patch_size=int(raw.get("patch_size", 256)),
        stride=int(raw.get("stride", 160)),
        raw_defect_size=int(raw.get("raw_defect_size", 512)),
        fractions=tuple(sorted(parse_rational(f, "fractions") for f in raw.get("fractions", DEFAULT_FRACTIONS))),
        allow_extreme_injection=bool(raw.get("allow_extreme_injection", False)),
        modalities=modalities,
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load and validate a pipeline config; None or an empty file give the defaults."""
    if path is None:
        cfg = PipelineConfig()
        cfg.validate()
        return cfg
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} does not parse as YAML: {exc}") from exc
    return config_from_dict(raw)


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True), encoding="utf-8")
