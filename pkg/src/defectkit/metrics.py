"""Imbalance-aware evaluation: image-level confusion metrics and MCC, AUROC,
optimal-F1 thresholding, and pixel-level AUROC / per-region overlap (PRO).

Conventions fixed for reproducibility:
  * predicted defective  <=>  image_score >= threshold
  * 0/0 rates are 0; MCC is 0 when any denominator factor vanishes
  * AUROC counts a tied positive/negative pair as 1/2
  * ground-truth regions are 8-connected
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .imagetypes import ImageLabel

_EIGHT_CONN = np.ones((3, 3), dtype=int)


class MetricError(ValueError):
    """Metric preconditions violated (e.g. single-class input)."""


@dataclass(eq=False)
class ScoredSample:
    """One evaluated test sample: an image score, a label, and optionally a
    pixel anomaly map with its aligned ground-truth mask."""

    id: str
    image_score: float | None
    label: ImageLabel
    anomaly_map: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.anomaly_map is not None:
            self.anomaly_map = np.asarray(self.anomaly_map, dtype=np.float64)
            if self.anomaly_map.ndim != 2:
                raise MetricError(f"sample {self.id}: anomaly map must be HxW")
        if self.mask is not None:
            self.mask = np.asarray(self.mask).astype(bool)
            if self.anomaly_map is not None and self.anomaly_map.shape != self.mask.shape:
                raise MetricError(
                    f"sample {self.id}: map shape {self.anomaly_map.shape} != mask shape {self.mask.shape}"
                )

    def effective_score(self) -> float:
        """Explicit image score, falling back to the map maximum."""
        if self.image_score is not None:
            return float(self.image_score)
        if self.anomaly_map is not None:
            return float(self.anomaly_map.max())
        raise MetricError(f"sample {self.id}: neither image_score nor anomaly_map present")


@dataclass(frozen=True)
class ConfusionCounts:
    tn: int
    tp: int
    fn: int
    fp: int

    def __post_init__(self) -> None:
        for name in ("tn", "tp", "fn", "fp"):
            if getattr(self, name) < 0:
                raise MetricError(f"confusion count {name} must be >= 0")

    @property
    def total(self) -> int:
        return self.tn + self.tp + self.fn + self.fp


def confusion(samples: Sequence[ScoredSample], threshold: float) -> ConfusionCounts:
    """Tally the confusion matrix at a decision threshold."""
    tn = tp = fn = fp = 0
    for s in samples:
        predicted = s.effective_score() >= threshold
        if s.label.defective:
            tp += predicted
            fn += not predicted
        else:
            fp += predicted
            tn += not predicted
    return ConfusionCounts(tn=tn, tp=tp, fn=fn, fp=fp)


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation coefficient; 0 when any denominator factor is 0."""
    num = c.tp * c.tn - c.fp * c.fn
    factors = (c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn)
    if any(f == 0 for f in factors):
        return 0.0
    den = math.sqrt(float(factors[0]) * factors[1] * factors[2] * factors[3])
    return num / den


def rates(c: ConfusionCounts) -> dict[str, float]:
    """recall, fpr and precision with the 0/0 -> 0 convention."""

    def ratio(a: int, b: int) -> float:
        return a / b if b else 0.0

    return {
        "recall": ratio(c.tp, c.tp + c.fn),
        "fpr": ratio(c.fp, c.fp + c.tn),
        "precision": ratio(c.tp, c.tp + c.fp),
    }


def f1_score(c: ConfusionCounts) -> float:
    den = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / den if den else 0.0


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties receiving their group's average rank."""
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    return ((starts + ends) / 2.0)[inverse]


def _rank_auroc(scores: np.ndarray, positives: np.ndarray) -> float:
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auroc needs at least one positive and one negative")
    ranks = _average_ranks(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auroc(scored: Iterable[tuple[float, bool]]) -> float:
    """Area under the ROC curve over (score, is_defective) pairs.

    Equivalent to the probability that a random positive outscores a random
    negative, with ties counted as 1/2 (trapezoidal ROC area).
    """
    pairs = list(scored)
    scores = np.array([p[0] for p in pairs], dtype=np.float64)
    positives = np.array([bool(p[1]) for p in pairs])
    return _rank_auroc(scores, positives)


def optimal_f1_threshold(samples: Sequence[ScoredSample]) -> float:
    """Threshold maximizing image-level F1.

    Candidates are the midpoints between consecutive distinct sorted scores
    plus +-infinity. Ties are broken toward the lower false-positive count,
    then toward the larger threshold.
    """
    scores = np.array([s.effective_score() for s in samples], dtype=np.float64)
    positive = np.array([s.label.defective for s in samples])
    n_pos = int(positive.sum())
    if n_pos == 0:
        raise MetricError("optimal_f1_threshold needs at least one positive sample")
    order = np.argsort(-scores, kind="mergesort")
    s_desc = scores[order]
    tp_cum = np.cumsum(positive[order])

    n = len(samples)
    best = None  # (f1, -fp, threshold_rank) maximized
    best_threshold = math.inf
    for cut in range(n + 1):
        # top `cut` samples predicted defective
        if 0 < cut < n and s_desc[cut - 1] == s_desc[cut]:
            continue  # cannot separate tied scores
        tp = int(tp_cum[cut - 1]) if cut else 0
        fp = cut - tp
        fn = n_pos - tp
        den = 2 * tp + fp + fn
        f1 = 2 * tp / den if den else 0.0
        if cut == 0:
            threshold = math.inf
        elif cut == n:
            threshold = -math.inf
        else:
            threshold = (s_desc[cut - 1] + s_desc[cut]) / 2.0
        key = (f1, -fp, threshold)
        if best is None or key > best:
            best = key
            best_threshold = threshold
    return float(best_threshold)


def connected_components(mask: np.ndarray) -> list[np.ndarray]:
    """8-connected components of a binary mask, each as an (k, 2) array of
    (row, col) pixel coordinates in row-major order."""
    mask = np.asarray(mask).astype(bool)
    labels, n = ndimage.label(mask, structure=_EIGHT_CONN)
    return [np.argwhere(labels == i) for i in range(1, n + 1)]


def pro_score(predictions: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> float:
    """Per-region overlap: mean over all ground-truth regions of the fraction
    of each region covered by the binarized prediction."""
    if len(predictions) != len(masks):
        raise MetricError("pro_score needs aligned prediction/mask sequences")
    overlaps: list[float] = []
    for pred, mask in zip(predictions, masks):
        pred = np.asarray(pred).astype(bool)
        mask = np.asarray(mask).astype(bool)
        if pred.shape != mask.shape:
            raise MetricError(f"prediction shape {pred.shape} != mask shape {mask.shape}")
        for region in connected_components(mask):
            covered = int(pred[region[:, 0], region[:, 1]].sum())
            overlaps.append(covered / len(region))
    if not overlaps:
        raise MetricError("pro_score needs at least one defective region in the test set")
    return float(np.mean(overlaps))


def pixel_auroc(maps: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> float:
    """AUROC over the pooled pixel population of all test patches."""
    if len(maps) != len(masks):
        raise MetricError("pixel_auroc needs aligned map/mask sequences")
    flat_scores = []
    flat_truth = []
    for amap, mask in zip(maps, masks):
        amap = np.asarray(amap, dtype=np.float64)
        mask = np.asarray(mask).astype(bool)
        if amap.shape != mask.shape:
            raise MetricError(f"map shape {amap.shape} != mask shape {mask.shape}")
        flat_scores.append(amap.ravel())
        flat_truth.append(mask.ravel())
    return _rank_auroc(np.concatenate(flat_scores), np.concatenate(flat_truth))


@dataclass(frozen=True)
class EvaluateOptions:
    border_crop: int = 0


@dataclass
class EvaluationReport:
    """Image metrics at the optimal-F1 threshold plus threshold-free AUROC,
    and pixel metrics when anomaly maps are available."""

    threshold: float
    counts: ConfusionCounts
    image: dict[str, float]
    pixel: dict[str, float] | None = None
    pixel_threshold: float | None = None
    border_crop: int = 0
    n_samples: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "counts": {"tn": self.counts.tn, "tp": self.counts.tp,
                       "fn": self.counts.fn, "fp": self.counts.fp},
            "image": dict(self.image),
            "pixel": dict(self.pixel) if self.pixel is not None else None,
            "pixel_threshold": self.pixel_threshold,
            "border_crop": self.border_crop,
            "n_samples": self.n_samples,
            "warnings": list(self.warnings),
        }


def _crop_border(array: np.ndarray, width: int) -> np.ndarray:
    if width == 0:
        return array
    h, w = array.shape
    if h <= 2 * width or w <= 2 * width:
        raise MetricError(f"border crop {width} leaves no interior for shape {array.shape}")
    return array[width:h - width, width:w - width]


def evaluate(samples: Sequence[ScoredSample], options: EvaluateOptions | None = None) -> EvaluationReport:
    """Full evaluation: optimal-F1 threshold, image metrics at it, AUROC
    threshold-free, and pixel AUROC/PRO when every sample carries a map.

    Pixel maps are binarized at the image-level threshold, so that the
    per-image maximum rule reproduces the image-level decision; an optional
    border crop is applied to maps and masks before pixel metrics only.
    """
    options = options or EvaluateOptions()
    if not samples:
        raise MetricError("evaluate needs a non-empty sample set")

    threshold = optimal_f1_threshold(samples)
    counts = confusion(samples, threshold)
    image = rates(counts)
    image["mcc"] = mcc(counts)
    image["auroc"] = auroc((s.effective_score(), s.label.defective) for s in samples)
    image["f1"] = f1_score(counts)

    with_maps = [s for s in samples if s.anomaly_map is not None]
    pixel = None
    pixel_threshold = None
    warnings: list[str] = []
    if with_maps:
        if len(with_maps) != len(samples):
            raise MetricError(
                f"inconsistent sample set: {len(with_maps)} of {len(samples)} samples have anomaly maps"
            )
        maps = []
        masks = []
        for s in samples:
            mask = s.mask
            if mask is None:
                if s.label.defective:
                    raise MetricError(f"sample {s.id}: defective sample with a map needs a ground-truth mask")
                mask = np.zeros(s.anomaly_map.shape, dtype=bool)
            maps.append(_crop_border(s.anomaly_map, options.border_crop))
            masks.append(_crop_border(mask, options.border_crop))
        pixel_threshold = threshold
        binarized = [m >= pixel_threshold for m in maps]
        pixel = {
            "auroc": pixel_auroc(maps, masks),
            "pro": pro_score(binarized, masks),
        }

    return EvaluationReport(
        threshold=threshold,
        counts=counts,
        image=image,
        pixel=pixel,
        pixel_threshold=pixel_threshold,
        border_crop=options.border_crop,
        n_samples=len(samples),
        warnings=warnings,
    )


def format_report_table(rows: Sequence[tuple[str, EvaluationReport]]) -> str:
    """Render reports in the detection-table column order:
    image AUROC/MCC/Recall/Precision/FPR, then pixel AUROC/PRO."""
    header = (f"{'Run':<24} {'AUROC(%)':>9} {'MCC':>6} {'Recall(%)':>10} "
              f"{'Precision(%)':>13} {'FPR(%)':>7} {'pxAUROC(%)':>11} {'PRO(%)':>7}")
    lines = [header, "-" * len(header)]
    for name, rep in rows:
        img = rep.image

        def pct(x: float | None) -> str:
            return f"{100.0 * x:.1f}" if x is not None else "-"

        px_auroc = pct(rep.pixel["auroc"]) if rep.pixel else "-"
        px_pro = pct(rep.pixel["pro"]) if rep.pixel else "-"
        lines.append(
            f"{name:<24} {pct(img['auroc']):>9} {img['mcc']:>6.2f} {pct(img['recall']):>10} "
            f"{pct(img['precision']):>13} {pct(img['fpr']):>7} {px_auroc:>11} {px_pro:>7}"
        )
    return "\n".join(lines)
