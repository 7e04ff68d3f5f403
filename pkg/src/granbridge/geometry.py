"""Axis-aligned boxes, IoU, enclosing boxes and COCO-style size classes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable

AREA_SMALL = 32.0**2
AREA_MEDIUM = 96.0**2


@dataclass(frozen=True)
class Box:
    """Corner-form box in continuous pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"box corners out of order: {coords}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x, y, x + w, y + h)

    def to_xywh(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max - self.x_min, self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


class SizeClass(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


def box_area(b: Box) -> float:
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def intersection_area(a: Box, b: Box) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def box_iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union is empty."""
    inter = intersection_area(a, b)
    union = box_area(a) + box_area(b) - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def enclosing_box(a: Box, b: Box) -> Box:
    return Box(
        min(a.x_min, b.x_min),
        min(a.y_min, b.y_min),
        max(a.x_max, b.x_max),
        max(a.y_max, b.y_max),
    )


def enclosing_box_of(boxes: Iterable[Box]) -> Box:
    """Smallest box containing every box in a non-empty collection."""
    boxes = list(boxes)
    if not boxes:
        raise ValueError("enclosing_box_of needs at least one box")
    return reduce(enclosing_box, boxes)


def box_contains(outer: Box, inner: Box) -> bool:
    return (
        outer.x_min <= inner.x_min
        and outer.y_min <= inner.y_min
        and outer.x_max >= inner.x_max
        and outer.y_max >= inner.y_max
    )


def classify_size(
    area: float, small: float = AREA_SMALL, medium: float = AREA_MEDIUM
) -> SizeClass:
    """Half-open strata: small < ``small`` <= medium < ``medium`` <= large."""
    if area < 0 or math.isnan(area):
        raise ValueError(f"area must be non-negative, got {area}")
    if area < small:
        return SizeClass.SMALL
    if area < medium:
        return SizeClass.MEDIUM
    return SizeClass.LARGE
