"""Uncompressed COCO-style run-length encoding and binary-mask set algebra.

Pixels are scanned in column-major order (down each column, then left to
right), and ``counts`` alternates zero-runs and one-runs starting with zeros.
Binary masks are plain ``(height, width)`` boolean numpy arrays.

Union and intersection walk both run lists at once and never materialise the
dense grid, so cost is linear in the number of runs rather than pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable

import numpy as np

from .geometry import Box


class MalformedRle(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class UnsupportedSegmentation(ValueError):
    """Compressed-string RLE or polygon segmentation."""


@dataclass(frozen=True, eq=True)
class RleMask:
    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise MalformedRle(f"mask dimensions must be positive, got {self.height}x{self.width}")
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if not counts:
            raise MalformedRle("empty counts")
        if any(c < 0 for c in counts):
            raise MalformedRle("negative run length")
        if any(c == 0 for c in counts[1:]):
            raise MalformedRle("zero-length run after the first position")
        total = sum(counts)
        if total != self.height * self.width:
            raise MalformedRle(
                f"counts sum to {total}, expected {self.height}*{self.width}={self.height * self.width}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @cached_property
    def area(self) -> int:
        return sum(self.counts[1::2])

    @cached_property
    def _intervals(self) -> tuple[np.ndarray, np.ndarray]:
        ends = np.cumsum(np.asarray(self.counts, dtype=np.int64))
        starts = ends - np.asarray(self.counts, dtype=np.int64)
        return starts[1::2], ends[1::2]

    @classmethod
    def empty(cls, height: int, width: int) -> "RleMask":
        return cls(height, width, (height * width,))

    def to_json(self) -> dict[str, Any]:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: Any) -> "RleMask":
        if isinstance(obj, list):
            raise UnsupportedSegmentation("polygon segmentation is not supported")
        if not isinstance(obj, dict) or "size" not in obj or "counts" not in obj:
            raise MalformedRle("RLE must be an object with 'size' and 'counts'")
        counts = obj["counts"]
        if isinstance(counts, (str, bytes)):
            raise UnsupportedSegmentation("compressed RLE strings are not supported")
        size = obj["size"]
        if (
            not isinstance(size, list)
            or len(size) != 2
            or not all(isinstance(s, int) and not isinstance(s, bool) for s in size)
        ):
            raise MalformedRle(f"RLE size must be [height, width] integers, got {size!r}")
        if not isinstance(counts, list) or not all(
            isinstance(c, int) and not isinstance(c, bool) for c in counts
        ):
            raise MalformedRle("RLE counts must be a list of integers")
        return cls(size[0], size[1], tuple(counts))


def rle_encode(mask: np.ndarray) -> RleMask:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise MalformedRle(f"expected a 2-D mask, got shape {mask.shape}")
    h, w = mask.shape
    flat = mask.ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs.insert(0, 0)
    return RleMask(h, w, tuple(runs))


def rle_decode(rle: RleMask) -> np.ndarray:
    if sum(rle.counts) != rle.height * rle.width:
        raise MalformedRle("counts do not cover the mask")
    values = np.arange(len(rle.counts)) % 2 == 1
    flat = np.repeat(values, rle.counts)
    return flat.reshape((rle.height, rle.width), order="F")


def _check_dims(a: RleMask, b: RleMask) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")


def _combine(a: RleMask, b: RleMask, op: Callable[[int, int], int]) -> RleMask:
    _check_dims(a, b)
    ca, cb = a.counts, b.counts
    ia = ib = 0
    ra, rb = ca[0], cb[0]
    va = vb = 0
    out: list[int] = []
    cur_val, cur_len = 0, 0
    remaining = a.height * a.width
    while remaining:
        while ra == 0:
            ia += 1
            ra = ca[ia]
            va ^= 1
        while rb == 0:
            ib += 1
            rb = cb[ib]
            vb ^= 1
        step = ra if ra < rb else rb
        v = op(va, vb)
        if v == cur_val:
            cur_len += step
        else:
            out.append(cur_len)
            cur_val, cur_len = v, step
        ra -= step
        rb -= step
        remaining -= step
    out.append(cur_len)
    return RleMask(a.height, a.width, tuple(out))


def mask_union(a: RleMask, b: RleMask) -> RleMask:
    return _combine(a, b, lambda x, y: x | y)


def mask_intersection(a: RleMask, b: RleMask) -> RleMask:
    return _combine(a, b, lambda x, y: x & y)


def mask_area(a: RleMask) -> int:
    return a.area


def _covered_before(starts: np.ndarray, ends: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Number of set pixels with scan index < x, for each x."""
    before = np.concatenate(([0], np.cumsum(ends - starts)))
    k = np.searchsorted(starts, x, side="right") - 1
    safe = np.maximum(k, 0)
    partial = np.minimum(x, ends[safe]) - starts[safe]
    return np.where(k >= 0, before[safe] + partial, 0)


def mask_intersection_area(a: RleMask, b: RleMask) -> int:
    _check_dims(a, b)
    sa, ea = a._intervals
    sb, eb = b._intervals
    if sa.size == 0 or sb.size == 0:
        return 0
    cov = _covered_before(sb, eb, np.concatenate((sa, ea)))
    n = sa.size
    return int(np.sum(cov[n:] - cov[:n]))


def mask_iou(a: RleMask, b: RleMask) -> float:
    """|a & b| / |a | b|, defined as 0 when both masks are empty."""
    inter = mask_intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dilate by a Chebyshev ball (a (2r+1) square) of the given radius."""
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    out = np.asarray(mask, dtype=bool).copy()
    if radius == 0:
        return out
    h, w = out.shape
    rows = out.copy()
    for d in range(1, radius + 1):
        if d < h:
            rows[d:, :] |= out[:-d, :]
            rows[:-d, :] |= out[d:, :]
    cols = rows.copy()
    for d in range(1, radius + 1):
        if d < w:
            cols[:, d:] |= rows[:, :-d]
            cols[:, :-d] |= rows[:, d:]
    return cols


def mask_bbox(rle: RleMask) -> Box | None:
    """Tight pixel-extent box of the set pixels, or None for an empty mask."""
    if rle.area == 0:
        return None
    dense = rle_decode(rle)
    ys = np.flatnonzero(dense.any(axis=1))
    xs = np.flatnonzero(dense.any(axis=0))
    return Box(float(xs[0]), float(ys[0]), float(xs[-1] + 1), float(ys[-1] + 1))
