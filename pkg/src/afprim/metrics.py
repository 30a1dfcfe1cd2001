"""Evaluation metrics: background RMSE, mask mIoU variants and histogram intersection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .geom import Mask

Array = np.ndarray

TABLE_COLUMNS = ("RMSE_Background", "mIoU", "mIoU_OcclusionAware", "SIM_Human", "SIM_Object")


@dataclass
class Histogram:
    bins: Array
    normalized: bool = False

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64).reshape(-1)
        if np.any(self.bins < 0):
            raise ValueError("histogram bins must be nonnegative")
        if self.normalized and abs(self.bins.sum() - 1.0) > 1e-9:
            raise ValueError("normalized histogram must sum to 1")


def histogram_similarity(a, b) -> float:
    """Intersection sum_k min(a_k, b_k) of the two unit-sum histograms, in [0, 1]."""
    a = a.bins if isinstance(a, Histogram) else np.asarray(a, dtype=np.float64)
    b = b.bins if isinstance(b, Histogram) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"bin count mismatch: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("histogram bins must be nonnegative")
    sa, sb = a.sum(), b.sum()
    if sa == 0 or sb == 0:
        raise ValueError("histogram with zero total mass")
    pa, pb = a / sa, b / sb
    if np.array_equal(pa, pb):
        return 1.0  # exact for identical shapes; the rounded sum can fall one ulp short
    return float(min(1.0, np.minimum(pa, pb).sum()))


def rmse_background(img_a: Array, img_b: Array, human_mask: Mask) -> float:
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image dimensions differ")
    keep = ~human_mask.bits
    if keep.shape != a.shape[:2]:
        raise ValueError("mask dimensions differ from images")
    if not keep.any():
        raise ValueError("mask covers every pixel")
    d = (a - b)[keep]
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class MIoUResult:
    value: float
    pairs_used: int
    skipped: List[int] = field(default_factory=list)

    def __float__(self) -> float:
        return self.value


def miou(masks_a: Sequence[Mask], masks_b: Sequence[Mask],
         exclude: Optional[Sequence[Optional[Mask]]] = None) -> MIoUResult:
    """Mean IoU over pairs; excluded pixels are removed from both masks first.

    Pairs whose union is empty after exclusion are skipped and listed.
    """
    if len(masks_a) != len(masks_b):
        raise ValueError("mask lists differ in length")
    if exclude is not None and len(exclude) != len(masks_a):
        raise ValueError("exclusion list length differs")
    vals, skipped = [], []
    for k, (ma, mb) in enumerate(zip(masks_a, masks_b)):
        if ma.bits.shape != mb.bits.shape:
            raise ValueError(f"pair {k}: mask dimensions differ")
        a, b = ma.bits, mb.bits
        if exclude is not None and exclude[k] is not None:
            keep = ~exclude[k].bits
            a, b = a & keep, b & keep
        union = np.logical_or(a, b).sum()
        if union == 0:
            skipped.append(k)
            continue
        vals.append(np.logical_and(a, b).sum() / union)
    value = float(np.mean(vals)) if vals else float("nan")
    return MIoUResult(value, len(vals), skipped)


def contact_similarity(pred: Array, truth: Array) -> float:
    """SIM between two per-point contact maps, reported x100."""
    return 100.0 * histogram_similarity(np.asarray(pred), np.asarray(truth))
