"""Mixed supervised stream composition.

A balanced fault-free/synthetic stream in which each item is replaced by an
augmented real defective patch with small probability, plus the nested
fraction schedule over the shuffled real-defect pool used for scalability
studies. Every item is seeded by (stream stage, item index), so the emitted
sequence is a pure function of (master seed, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .config import ModalityConfig
from .imagetypes import GroundTruthMask, ImageLabel, Patch
from .patches import augment, crop_defect_window
from .rng import STAGE_POOL_SHUFFLE, STAGE_STREAM, derive_rng
from .synthesis import synthesize

SOURCES = ("fault_free", "synthetic", "real")


class StreamError(RuntimeError):
    """Stream construction failed (e.g. empty pool after filtering)."""


@dataclass(eq=False)
class PoolItem:
    """One real defective raw patch with its weak image-level label."""

    patch: Patch
    label: ImageLabel

    def __post_init__(self) -> None:
        if not self.label.defective or self.label.defect_group not in ("points", "area"):
            raise StreamError("pool items must be real defects labeled points or area")


@dataclass(eq=False)
class RealDefectPool:
    items: list[PoolItem]
    shuffle_seed: int = 0


@dataclass(frozen=True)
class FractionSchedule:
    fractions: tuple[Fraction, ...]
    group_filter: str = "mixed"

    def __post_init__(self) -> None:
        if self.group_filter not in ("points", "area", "mixed"):
            raise StreamError(f"group_filter must be points, area or mixed, got {self.group_filter!r}")


@dataclass
class FractionMap:
    """Nested prefixes of the shuffled (and optionally group-filtered) pool."""

    by_fraction: dict[Fraction, list[PoolItem]]
    pool_size: int
    warnings: list[str] = field(default_factory=list)


def fraction_sizes(total: int, fractions: Sequence[Fraction]) -> dict[Fraction, int]:
    """floor(total * f) per fraction."""
    return {f: math.floor(total * f) for f in fractions}


def build_fractions(pool: RealDefectPool, schedule: FractionSchedule) -> FractionMap:
    """Shuffle the pool once, then cut ordered prefixes per fraction.

    Smaller fractions are prefixes of larger ones by construction. Fractions
    that select zero items are kept (empty) and surfaced as warnings.
    """
    if schedule.group_filter == "mixed":
        items = list(pool.items)
    else:
        items = [it for it in pool.items if it.label.defect_group == schedule.group_filter]
    if not items:
        raise StreamError(f"no real defects left after group filter {schedule.group_filter!r}")
    rng = derive_rng(pool.shuffle_seed, (STAGE_POOL_SHUFFLE,))
    order = rng.permutation(len(items))
    shuffled = [items[int(i)] for i in order]
    sizes = fraction_sizes(len(items), sorted(schedule.fractions))
    warnings = [
        f"fraction {f} selects 0 of {len(items)} pool items; injection disabled for it"
        for f, k in sizes.items() if k == 0
    ]
    return FractionMap(
        by_fraction={f: shuffled[:k] for f, k in sizes.items()},
        pool_size=len(items),
        warnings=warnings,
    )


@dataclass(eq=False)
class StreamItem:
    """One labeled training sample emitted by the sampler."""

    patch: Patch
    mask: GroundTruthMask | None
    label: ImageLabel
    source: str

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise StreamError(f"unknown source {self.source!r}")
        if self.source == "fault_free" and (self.mask is None or not self.mask.empty):
            raise StreamError("fault-free items must carry an empty mask")
        if self.source == "synthetic" and (self.mask is None or self.mask.empty):
            raise StreamError("synthetic items must carry a non-empty mask")
        if self.source == "real" and self.mask is not None:
            raise StreamError("real items carry only a weak label, no mask")


@dataclass
class EpochSummary:
    n: int
    source_counts: dict[str, int]
    group_counts: dict[str, int]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "source_counts": dict(self.source_counts),
            "group_counts": dict(self.group_counts),
            "warnings": list(self.warnings),
        }


SynthesizeFn = Callable[[Patch, object, np.random.Generator], tuple[Patch, GroundTruthMask, object]]


class MixedStream:
    """Stream state: fault-free source, synthesis settings, active real
    fraction and the injection probability.

    `synthesize_fn` exists so tests can stub the texture model with fixed
    textures; production code leaves it at the default.
    """

    def __init__(
        self,
        fault_free: Sequence[Patch],
        modality: ModalityConfig,
        master_seed: int = 0,
        active_real: Sequence[PoolItem] = (),
        p_inject: Fraction | float = Fraction(1, 32),
        r_syn: Fraction | float = Fraction(1, 2),
        allow_extreme_injection: bool = False,
        synthesize_fn: SynthesizeFn | None = None,
    ) -> None:
        if not fault_free:
            raise StreamError("stream needs at least one fault-free patch")
        self.fault_free = [p.gray() for p in fault_free]
        self.modality = modality
        self.master_seed = master_seed
        self.active_real = list(active_real)
        self.p_inject = float(p_inject)
        self.r_syn = float(r_syn)
        self.synthesize_fn = synthesize_fn or synthesize
        self.warnings: list[str] = []
        if not 0.0 <= self.p_inject <= 1.0:
            raise StreamError(f"p_inject must lie in [0, 1], got {self.p_inject}")
        if self.p_inject >= 0.5:
            if not allow_extreme_injection:
                raise StreamError(
                    f"p_inject {self.p_inject} >= 1/2 contradicts the mixed-stream design; "
                    "pass allow_extreme_injection to force"
                )
            self.warnings.append(f"forced extreme injection probability {self.p_inject}")
        if not 0.0 < self.r_syn <= 1.0:
            raise StreamError(f"r_syn must lie in (0, 1], got {self.r_syn}")
        if self.p_inject > 0.0 and not self.active_real:
            self.warnings.append("active real fraction is empty; injection probability treated as 0")

    def next_item(self, rng: np.random.Generator) -> StreamItem:
        """Emit one item. Draw order: fault-free index, synthesis gate,
        injection gate, then the chosen branch's own draws."""
        ff_idx = int(rng.integers(len(self.fault_free)))
        u_syn = rng.random()
        u_inject = rng.random()
        if self.active_real and u_inject < self.p_inject:
            ridx = int(rng.integers(len(self.active_real)))
            item = self.active_real[ridx]
            cropped = crop_defect_window(item.patch.gray(), rng)
            augmented = augment(cropped, self.modality.augmentation, rng)
            return StreamItem(patch=augmented, mask=None, label=item.label, source="real")
        base = self.fault_free[ff_idx]
        if u_syn < self.r_syn:
            defective, mask, _params = self.synthesize_fn(base, self.modality.synthesis, rng)
            return StreamItem(patch=defective, mask=mask,
                              label=ImageLabel.defect("synthetic"), source="synthetic")
        return StreamItem(patch=base, mask=GroundTruthMask.zeros(base.height, base.width),
                          label=ImageLabel.good(), source="fault_free")

    def item_rng(self, index: int) -> np.random.Generator:
        return derive_rng(self.master_seed, (STAGE_STREAM, index))

    def iter_epoch(self, n: int, start_index: int = 0):
        """Yield n items one at a time (per-index seeded); epochs at real
        scale are far larger than memory, so consumers should stream."""
        if n < 0:
            raise StreamError(f"epoch size must be >= 0, got {n}")
        for i in range(n):
            yield self.next_item(self.item_rng(start_index + i))

    def emit_epoch(self, n: int, start_index: int = 0) -> tuple[list[StreamItem], EpochSummary]:
        """Materialize n items plus their composition summary (small epochs)."""
        counter = EpochCounter()
        items = [counter.add(item) for item in self.iter_epoch(n, start_index)]
        return items, counter.summary(self.warnings)


class EpochCounter:
    """Accumulates the per-source / per-group composition of a streamed epoch."""

    def __init__(self) -> None:
        self.source_counts = {s: 0 for s in SOURCES}
        self.group_counts: dict[str, int] = {}
        self.n = 0

    def add(self, item: StreamItem) -> StreamItem:
        self.n += 1
        self.source_counts[item.source] += 1
        if item.label.defective:
            group = item.label.defect_group
            self.group_counts[group] = self.group_counts.get(group, 0) + 1
        return item

    def summary(self, warnings: Sequence[str] = ()) -> EpochSummary:
        return EpochSummary(n=self.n, source_counts=dict(self.source_counts),
                            group_counts=dict(self.group_counts), warnings=list(warnings))
