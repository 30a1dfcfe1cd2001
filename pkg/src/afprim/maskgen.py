"""Sliding-window inpainting-mask proposals over object silhouettes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .geom import Mask


@dataclass(frozen=True)
class WindowSpec:
    width: int
    height: int
    stride_x: int
    stride_y: int
    iou_lo: float = 0.0
    iou_hi: float = 1.0
    # "object" scores |window ∩ object| / |object| instead of IoU
    overlap: str = "iou"

    def __post_init__(self):
        if not (0 < self.stride_x <= self.width and 0 < self.stride_y <= self.height):
            raise ValueError("strides must satisfy 0 < stride <= window dimension")
        if not 0.0 <= self.iou_lo <= self.iou_hi <= 1.0:
            raise ValueError("need 0 <= iou_lo <= iou_hi <= 1")
        if self.overlap not in ("iou", "object"):
            raise ValueError(f"unknown overlap mode {self.overlap!r}")


def window_positions(frame_w: int, frame_h: int, spec: WindowSpec):
    """Row-major top-left corners of windows that fit in the frame."""
    for y in range(0, frame_h - spec.height + 1, spec.stride_y):
        for x in range(0, frame_w - spec.width + 1, spec.stride_x):
            yield x, y


def slide_window_masks(object_mask: Mask, spec: WindowSpec) -> List[Mask]:
    obj = object_mask.bits
    area_obj = int(obj.sum())
    if area_obj == 0:
        return []
    rows = np.flatnonzero(obj.any(axis=1))
    cols = np.flatnonzero(obj.any(axis=0))
    # summed-area table for O(1) window intersections
    sat = np.zeros((obj.shape[0] + 1, obj.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = obj.astype(np.int64).cumsum(0).cumsum(1)
    win_area = spec.width * spec.height
    out = []
    for x, y in window_positions(object_mask.width, object_mask.height, spec):
        cx = x + spec.width // 2
        cy = y + spec.height // 2
        if not (cols[0] <= cx <= cols[-1] and rows[0] <= cy <= rows[-1]):
            continue
        y1, x1 = y + spec.height, x + spec.width
        inter = int(sat[y1, x1] - sat[y, x1] - sat[y1, x] + sat[y, x])
        if spec.overlap == "iou":
            score = inter / (win_area + area_obj - inter)
        else:
            score = inter / area_obj
        if spec.iou_lo <= score <= spec.iou_hi:
            bits = np.zeros_like(obj)
            bits[y:y1, x:x1] = True
            out.append(Mask(object_mask.width, object_mask.height, bits))
    return out
