"""COCO-style AP/AR for boxes and masks, label-agnostic AP and Sim->Real gaps.

Matching follows the COCO convention: detections are processed by descending
score (ties broken by input order), each one takes the free ground truth with
the highest IoU at or above the threshold, and each ground truth is matched at
most once. AP uses 101-point interpolated precision.

Size strata restrict the ground truth by area. Ground truth outside the
stratum is ignored rather than removed, so a detection that lands on it is
ignored too, and unmatched detections outside the stratum do not count as
false positives. Empty strata and categories without ground truth report -1.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Any, Hashable, Iterable, Optional, Sequence

import numpy as np

from . import geometry
from .geometry import AREA_MEDIUM, AREA_SMALL, Box, SizeClass, box_area, box_iou
from .rle import RleMask, mask_area, mask_iou

SENTINEL = -1.0
TREE_CATEGORY = "tree"

IOU_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))
RECALL_GRID = np.arange(101) / 100


class Task(enum.Enum):
    BBOX = "bbox"
    SEGM = "segm"


class MissingMask(ValueError):
    pass


@dataclass(frozen=True)
class GtInstance:
    id: Hashable
    image_id: Hashable
    category: Hashable
    box: Box
    mask: Optional[RleMask] = None
    area: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        area = mask_area(self.mask) if self.mask is not None else box_area(self.box)
        object.__setattr__(self, "area", float(area))


@dataclass(frozen=True)
class Detection:
    image_id: Hashable
    category: Hashable
    score: float
    box: Box
    mask: Optional[RleMask] = None
    id: Hashable = None  # source annotation id, for error messages only

    def __post_init__(self) -> None:
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    max_dets: tuple[int, ...] = (100, 300, 1000)
    area_small: float = AREA_SMALL
    area_medium: float = AREA_MEDIUM
    threads: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.iou_thresholds or not all(0 < t <= 1 for t in self.iou_thresholds):
            raise ValueError("IoU thresholds must lie in (0, 1]")
        if not self.max_dets or min(self.max_dets) < 1:
            raise ValueError("max_dets must be positive")
        if not 0 <= self.area_small <= self.area_medium:
            raise ValueError("need 0 <= area_small <= area_medium")


@dataclass(frozen=True)
class EvalReport:
    task: Task
    ap_per_iou: tuple[float, ...]
    ap: float
    ap50: float
    ap75: float
    ap_s: float
    ap_m: float
    ap_l: float
    ar100: float
    ar300: float
    ar1000: float
    ar_s: float
    ar_m: float
    ar_l: float

    METRIC_KEYS = ("ap", "ap50", "ap75", "ap_s", "ap_m", "ap_l",
                   "ar100", "ar300", "ar1000", "ar_s", "ar_m", "ar_l")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {k: getattr(self, k) for k in self.METRIC_KEYS}
        out["task"] = self.task.value
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "EvalReport":
        missing = [k for k in (*cls.METRIC_KEYS, "task") if k not in obj]
        if missing:
            raise ValueError(f"eval report is missing keys: {missing}")
        values = {k: float(obj[k]) for k in cls.METRIC_KEYS}
        return cls(task=Task(obj["task"]), ap_per_iou=(), **values)

    def table(self) -> str:
        rows = [("task", self.task.value)]
        labels = {
            "ap": "AP @[.50:.95]", "ap50": "AP @.50", "ap75": "AP @.75",
            "ap_s": "AP small", "ap_m": "AP medium", "ap_l": "AP large",
            "ar100": "AR @100", "ar300": "AR @300", "ar1000": "AR @1000",
            "ar_s": "AR small", "ar_m": "AR medium", "ar_l": "AR large",
        }
        rows += [(labels[k], f"{getattr(self, k):.3f}") for k in self.METRIC_KEYS]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value:>7}" for name, value in rows)


@dataclass(frozen=True)
class GapReport:
    sim_value: float
    real_value: float
    absolute_gap: float
    relative_drop: float  # percent

    def format(self) -> str:
        return f"{self.absolute_gap:.3f} ({self.relative_drop:.1f}%)"

    def to_json(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def gap_report(sim_value: float, real_value: float) -> GapReport:
    if not sim_value > 0:
        raise ValueError(f"sim value must be positive, got {sim_value}")
    gap = sim_value - real_value
    return GapReport(sim_value, real_value, gap, 100.0 * gap / sim_value)


# -- matching -----------------------------------------------------------------


def _require_masks(dets: Sequence[Detection], gts: Sequence[GtInstance]) -> None:
    for g in gts:
        if g.mask is None:
            raise MissingMask(f"segm evaluation needs a mask on ground truth {g.id}")
    for i, d in enumerate(dets):
        if d.mask is None:
            name = f"detection {d.id}" if d.id is not None else f"detection #{i}"
            raise MissingMask(f"segm evaluation needs a mask on {name} (image {d.image_id})")


def iou_matrix(dets: Sequence[Detection], gts: Sequence[GtInstance], task: Task) -> np.ndarray:
    out = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            if task is Task.SEGM:
                out[i, j] = mask_iou(d.mask, g.mask)
            else:
                out[i, j] = box_iou(d.box, g.box)
    return out


def _score_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def _match(
    ious: np.ndarray, gt_ignore: np.ndarray, threshold: float
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy matching of score-ordered rows against columns.

    Non-ignored ground truth is preferred; within a tier the highest IoU wins,
    lowest column on ties. Returns the matched column per row (-1 if none) and
    whether that column is ignored.
    """
    n_det, n_gt = ious.shape
    taken = np.zeros(n_gt, dtype=bool)
    matched = np.full(n_det, -1)
    on_ignored = np.zeros(n_det, dtype=bool)
    for d in range(n_det):
        free = ~taken & (ious[d] >= threshold)
        if not free.any():
            continue
        for tier in (free & ~gt_ignore, free & gt_ignore):
            if tier.any():
                g = int(np.argmax(np.where(tier, ious[d], -1.0)))
                matched[d] = g
                on_ignored[d] = gt_ignore[g]
                taken[g] = True
                break
    return matched, on_ignored


def greedy_match(
    dets: Sequence[Detection],
    gts: Sequence[GtInstance],
    iou_threshold: float,
    task: Task = Task.BBOX,
) -> list[bool]:
    """True-positive flag per detection, in input order (single image and category)."""
    if len({d.image_id for d in dets} | {g.image_id for g in gts}) > 1:
        raise ValueError("greedy_match works on a single image")
    if len({d.category for d in dets} | {g.category for g in gts}) > 1:
        raise ValueError("greedy_match works on a single category")
    if task is Task.SEGM:
        _require_masks(dets, gts)
    order = _score_order(dets)
    ious = iou_matrix([dets[i] for i in order], gts, task)
    matched, _ = _match(ious, np.zeros(len(gts), dtype=bool), iou_threshold)
    flags = [False] * len(dets)
    for rank, i in enumerate(order):
        flags[i] = bool(matched[rank] >= 0)
    return flags


# -- precision / recall ---------------------------------------------------------


def ap_101(tp_flags: Iterable[bool], num_gt: int) -> float:
    """101-point interpolated AP of score-ranked TP/FP flags."""
    if num_gt < 0:
        raise ValueError("num_gt must be non-negative")
    flags = np.asarray(list(tp_flags), dtype=bool)
    if num_gt == 0 or flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    q = np.where(idx < envelope.size, envelope[np.minimum(idx, envelope.size - 1)], 0.0)
    return float(np.mean(q))


_AREAS = ("all", SizeClass.SMALL, SizeClass.MEDIUM, SizeClass.LARGE)


@dataclass
class _ImageCategoryResult:
    image_key: int
    scores: np.ndarray  # score-ordered
    input_index: np.ndarray
    # keyed by (area, threshold index)
    tp: dict[tuple[Any, int], np.ndarray]
    ignored: dict[tuple[Any, int], np.ndarray]
    num_gt: dict[Any, int]


def _evaluate_image_category(
    image_key: int,
    dets: list[tuple[int, Detection]],
    gts: list[GtInstance],
    task: Task,
    cfg: EvalConfig,
) -> _ImageCategoryResult:
    dets = sorted(dets, key=lambda p: (-p[1].score, p[0]))
    dets = dets[: max(cfg.max_dets)]
    det_objs = [d for _, d in dets]
    ious = iou_matrix(det_objs, gts, task)
    if task is Task.SEGM:
        det_area = np.array([mask_area(d.mask) for d in det_objs], dtype=float)
    else:
        det_area = np.array([box_area(d.box) for d in det_objs], dtype=float)

    def size(a: float) -> SizeClass:
        return geometry.classify_size(a, cfg.area_small, cfg.area_medium)

    gt_size = [size(g.area) for g in gts]
    det_size = [size(a) for a in det_area]
    tp, ignored, num_gt = {}, {}, {}
    for area in _AREAS:
        gt_ignore = np.array([area != "all" and s is not area for s in gt_size], dtype=bool)
        det_out = np.array([area != "all" and s is not area for s in det_size], dtype=bool)
        num_gt[area] = int((~gt_ignore).sum())
        for t, thr in enumerate(cfg.iou_thresholds):
            matched, on_ignored = _match(ious, gt_ignore, thr)
            is_tp = (matched >= 0) & ~on_ignored
            tp[area, t] = is_tp
            ignored[area, t] = on_ignored | ((matched < 0) & det_out)
    return _ImageCategoryResult(
        image_key=image_key,
        scores=np.array([d.score for d in det_objs], dtype=float),
        input_index=np.array([i for i, _ in dets], dtype=int),
        tp=tp,
        ignored=ignored,
        num_gt=num_gt,
    )


def _accumulate(
    results: list[_ImageCategoryResult], area: Any, t: int, max_det: int
) -> tuple[float, float]:
    """(AP, recall) for one category, area range, threshold and detection cap."""
    num_gt = sum(r.num_gt[area] for r in results)
    if num_gt == 0:
        return SENTINEL, SENTINEL
    keys, flags = [], []
    for r in results:
        n = min(max_det, r.scores.size)
        keep = ~r.ignored[area, t][:n]
        for k in np.flatnonzero(keep):
            keys.append((-r.scores[k], r.image_key, r.input_index[k]))
            flags.append(bool(r.tp[area, t][k]))
    order = sorted(range(len(keys)), key=keys.__getitem__)
    ranked = [flags[i] for i in order]
    recall = sum(ranked) / num_gt
    return ap_101(ranked, num_gt), recall


def _mean_valid(values: Iterable[float]) -> float:
    vals = [v for v in values if v > SENTINEL]
    return float(np.mean(vals)) if vals else SENTINEL


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GtInstance],
    task: Task = Task.BBOX,
    config: EvalConfig = EvalConfig(),
    image_ids: Optional[Iterable[Hashable]] = None,
) -> EvalReport:
    if task is Task.SEGM:
        _require_masks(dets, gts)
    known = set(image_ids) if image_ids is not None else None
    if known is not None:
        stray = {d.image_id for d in dets} | {g.image_id for g in gts}
        stray -= known
        if stray:
            raise ValueError(f"instances reference unknown images: {sorted(map(str, stray))}")
    else:
        known = {d.image_id for d in dets} | {g.image_id for g in gts}
    image_rank = {img: k for k, img in enumerate(sorted(known))}
    categories = sorted({d.category for d in dets} | {g.category for g in gts}, key=str)

    det_groups: dict[tuple[Any, Any], list[tuple[int, Detection]]] = {}
    for i, d in enumerate(dets):
        det_groups.setdefault((d.image_id, d.category), []).append((i, d))
    gt_groups: dict[tuple[Any, Any], list[GtInstance]] = {}
    for g in gts:
        gt_groups.setdefault((g.image_id, g.category), []).append(g)

    jobs = sorted(set(det_groups) | set(gt_groups), key=lambda k: (image_rank[k[0]], str(k[1])))

    def run(key: tuple[Any, Any]) -> _ImageCategoryResult:
        return _evaluate_image_category(
            image_rank[key[0]], det_groups.get(key, []), gt_groups.get(key, []), task, config
        )

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        per_job = list(pool.map(run, jobs))

    by_cat: dict[Any, list[_ImageCategoryResult]] = {c: [] for c in categories}
    for key, res in zip(jobs, per_job):
        by_cat[key[1]].append(res)

    top = max(config.max_dets)
    n_thr = len(config.iou_thresholds)
    memo: dict[tuple[Any, Any, int, int], tuple[float, float]] = {}

    def cell(c: Any, area: Any, t: int, max_det: int) -> tuple[float, float]:
        key = (c, area, t, max_det)
        if key not in memo:
            memo[key] = _accumulate(by_cat[c], area, t, max_det)
        return memo[key]

    ap_per_iou = tuple(
        _mean_valid(cell(c, "all", t, top)[0] for c in categories) for t in range(n_thr)
    )

    def at_threshold(value: float) -> float:
        for t, thr in enumerate(config.iou_thresholds):
            if abs(thr - value) < 1e-9:
                return ap_per_iou[t]
        return SENTINEL

    def stratum_ap(area: Any) -> float:
        return _mean_valid(cell(c, area, t, top)[0] for t in range(n_thr) for c in categories)

    def stratum_ar(area: Any, max_det: int) -> float:
        return _mean_valid(cell(c, area, t, max_det)[1] for t in range(n_thr) for c in categories)

    ar = {k: stratum_ar("all", k) for k in (100, 300, 1000)}
    return EvalReport(
        task=task,
        ap_per_iou=ap_per_iou,
        ap=_mean_valid(ap_per_iou),
        ap50=at_threshold(0.5),
        ap75=at_threshold(0.75),
        ap_s=stratum_ap(SizeClass.SMALL),
        ap_m=stratum_ap(SizeClass.MEDIUM),
        ap_l=stratum_ap(SizeClass.LARGE),
        ar100=ar[100],
        ar300=ar[300],
        ar1000=ar[1000],
        ar_s=stratum_ar(SizeClass.SMALL, top),
        ar_m=stratum_ar(SizeClass.MEDIUM, top),
        ar_l=stratum_ar(SizeClass.LARGE, top),
    )


def relabel(items: Sequence[Any], category: Hashable = TREE_CATEGORY) -> list[Any]:
    return [replace(x, category=category) for x in items]


def label_agnostic_ap(
    trunk_dets: Sequence[Detection],
    whole_dets: Sequence[Detection],
    tree_gts: Sequence[GtInstance],
    task: Task = Task.BBOX,
    config: EvalConfig = EvalConfig(),
    image_ids: Optional[Iterable[Hashable]] = None,
) -> EvalReport:
    """AP of both teachers pooled under one class against coarse ground truth.

    No duplicate suppression is applied. The pool lists whole-tree detections
    before trunk detections, so at equal scores the coarser teacher ranks first.
    """
    pooled = relabel(whole_dets) + relabel(trunk_dets)
    return evaluate(pooled, relabel(tree_gts), task, config, image_ids)
