"""Validation metrics and overlap statistics against reference water layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import Raster, require_same_grid


class UndefinedRateError(ZeroDivisionError):
    """A rate was requested over an empty reference set."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    iou: float


def _binary(r) -> tuple[np.ndarray, np.ndarray]:
    """(positive, valid) boolean arrays for a binary raster or array."""
    if isinstance(r, Raster):
        valid = r.valid_mask()
        return (r.pixels != 0) & valid, valid
    arr = np.asarray(r)
    return arr != 0, np.ones(arr.shape, dtype=bool)


def _congruent(*layers):
    rasters = [x for x in layers if isinstance(x, Raster)]
    if len(rasters) > 1:
        require_same_grid(*rasters)
    shapes = {np.shape(x.pixels if isinstance(x, Raster) else x) for x in layers}
    if len(shapes) > 1:
        raise ValueError(f"layers have different shapes: {sorted(shapes)}")


def confusion(pred, truth, ignore=None) -> ConfusionCounts:
    """Pixel confusion counts; nodata in either layer or ``ignore`` != 0 is skipped."""
    layers = [pred, truth] + ([ignore] if ignore is not None else [])
    _congruent(*layers)
    p, pv = _binary(pred)
    t, tv = _binary(truth)
    keep = pv & tv
    if ignore is not None:
        ig, igv = _binary(ignore)
        keep &= ~ig
    p = p[keep]
    t = t[keep]
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, int(p.size) - tp - fp - fn)


def metrics_from_counts(c: ConfusionCounts) -> Metrics:
    """Precision, recall, F1 and IoU with fixed conventions for empty denominators.

    * precision with no predicted positives: 1.0 if the truth is also empty, else 0.0
    * recall with no true positives to find: 1.0 if nothing was predicted, else 0.0
    * F1 is 0.0 when precision + recall is 0
    * IoU with an empty union: 1.0
    """
    truth_empty = c.tp + c.fn == 0
    pred_empty = c.tp + c.fp == 0
    if pred_empty:
        precision = 1.0 if truth_empty else 0.0
    else:
        precision = c.tp / (c.tp + c.fp)
    if truth_empty:
        recall = 1.0 if pred_empty else 0.0
    else:
        recall = c.tp / (c.tp + c.fn)
    # 2PR/(P+R) rewritten in counts so it stays exact when both are defined
    if c.tp > 0:
        f1 = 2 * c.tp / (2 * c.tp + c.fp + c.fn)
    elif precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    union = c.tp + c.fp + c.fn
    iou = c.tp / union if union else 1.0
    return Metrics(precision, recall, f1, iou)


def compare_metrics(pred, truth, ignore=None) -> Metrics:
    return metrics_from_counts(confusion(pred, truth, ignore))


def gsw_flood_prone(occurrence, threshold_pct: float = 50.0, include_zero: bool = False):
    """Flood-prone pixels of a water-occurrence layer (percent of observations).

    A pixel is flood-prone when its occurrence is strictly below
    ``threshold_pct``; never-water pixels (occurrence 0) only count when
    ``include_zero`` is set.
    """
    if isinstance(occurrence, Raster):
        occ = occurrence.as_float()
    else:
        occ = np.asarray(occurrence, dtype=float)
    finite = occ[np.isfinite(occ)]
    if finite.size and (finite.min() < 0 or finite.max() > 100):
        raise ValueError("occurrence values must lie in [0, 100]")
    with np.errstate(invalid="ignore"):
        lower = occ >= 0 if include_zero else occ > 0
        prone = lower & (occ < threshold_pct)
    if not isinstance(occurrence, Raster):
        return prone
    valid = occurrence.valid_mask()
    out = np.where(valid, prone.astype(np.uint8), 255).astype(np.uint8)
    return Raster(out, occurrence.transform, 255 if not valid.all() else None)


@dataclass(frozen=True)
class OverlapStats:
    detection_rate: float
    detection_rate_outside_mask: float | None = None


def _exclusion_array(exclusion):
    mask = getattr(exclusion, "mask", exclusion)
    pos, _ = _binary(mask)
    return pos


def overlap_stats(ours, reference, exclusion=None) -> OverlapStats:
    """Fraction of reference positives that ``ours`` also marks.

    With an exclusion mask, the second rate restricts numerator and
    denominator to pixels outside the mask.
    """
    layers = [ours, reference]
    if exclusion is not None:
        layers.append(getattr(exclusion, "mask", exclusion))
    _congruent(*layers)
    o, _ = _binary(ours)
    ref, _ = _binary(reference)
    n_ref = int(np.count_nonzero(ref))
    if n_ref == 0:
        raise UndefinedRateError("reference layer has no positive pixels")
    rate = np.count_nonzero(o & ref) / n_ref
    outside = None
    if exclusion is not None:
        keep = ~_exclusion_array(exclusion)
        n_keep = int(np.count_nonzero(ref & keep))
        if n_keep == 0:
            raise UndefinedRateError("every reference pixel lies inside the exclusion mask")
        outside = np.count_nonzero(o & ref & keep) / n_keep
    return OverlapStats(float(rate), None if outside is None else float(outside))


def new_area_pct(ours, refs) -> float:
    """Area marked by ``ours`` outside the union of ``refs``, as a percent of that union."""
    refs = list(refs)
    if not refs:
        raise UndefinedRateError("no reference layers given")
    _congruent(ours, *refs)
    o, _ = _binary(ours)
    union = np.zeros(o.shape, dtype=bool)
    for r in refs:
        union |= _binary(r)[0]
    n_union = int(np.count_nonzero(union))
    if n_union == 0:
        raise UndefinedRateError("reference union is empty")
    return 100.0 * np.count_nonzero(o & ~union) / n_union
