"""Strict reader/writer for the COCO-subset JSON document format.

Only uncompressed RLE segmentation is accepted. Polygons, compressed RLE
strings and crowd annotations are rejected so that no mask is ever silently
misread. Unknown fields are kept on the parsed objects and written back out.

Canonical output sorts object keys and entity ids and uses Python's shortest
round-trip float formatting, so the same document always yields the same bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .bridge import MergedTarget, Source, TeacherPrediction, logit_from_score, sigmoid
from .evaluation import Detection, GtInstance
from .geometry import Box
from .rle import MalformedRle, RleMask, UnsupportedSegmentation

MAX_DOC_MB_ENV = "GRANBRIDGE_MAX_DOC_MB"
DEFAULT_MAX_DOC_MB = 512
SPLIT_NAMES = ("train", "val", "test")


class DatasetError(ValueError):
    pass


class DatasetSyntaxError(DatasetError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnsupportedFormat(DatasetError):
    pass


class DocumentTooLarge(DatasetError):
    pass


@dataclass
class ImageInfo:
    id: int
    width: int
    height: int
    file_name: str = ""
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass
class Category:
    id: int
    name: str
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    segmentation: Optional[RleMask] = None
    area: Optional[float] = None
    score: Optional[float] = None
    logit: Optional[float] = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def box(self) -> Box:
        return Box.from_xywh(*self.bbox)


@dataclass
class DatasetDoc:
    images: list[ImageInfo] = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)
    categories: list[Category] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def image(self, image_id: int) -> ImageInfo:
        for img in self.images:
            if img.id == image_id:
                return img
        raise KeyError(image_id)

    def annotations_by_image(self) -> dict[int, list[Annotation]]:
        out: dict[int, list[Annotation]] = {img.id: [] for img in self.images}
        for ann in self.annotations:
            out[ann.image_id].append(ann)
        return out

    def category_named(self, name: str) -> Category:
        for cat in self.categories:
            if cat.name == name:
                return cat
        raise KeyError(name)


# -- parsing ---------------------------------------------------------------------


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v: Any) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _take(obj: dict[str, Any], known: Iterable[str]) -> dict[str, Any]:
    return {k: v for k, v in obj.items() if k not in known}


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise DatasetError(message)


def max_doc_bytes() -> int:
    raw = os.environ.get(MAX_DOC_MB_ENV)
    if raw is None:
        return DEFAULT_MAX_DOC_MB * 1024 * 1024
    try:
        mb = float(raw)
    except ValueError:
        raise DatasetError(f"{MAX_DOC_MB_ENV} must be a number, got {raw!r}") from None
    return int(mb * 1024 * 1024)


def _parse_image(obj: Any) -> ImageInfo:
    _require(isinstance(obj, dict), "image entries must be objects")
    iid = obj.get("id")
    _require(_is_int(iid), f"image id must be an integer, got {iid!r}")
    w, h = obj.get("width"), obj.get("height")
    _require(_is_int(w) and w > 0 and _is_int(h) and h > 0,
             f"image {iid}: width and height must be positive integers")
    name = obj.get("file_name", "")
    _require(isinstance(name, str), f"image {iid}: file_name must be a string")
    return ImageInfo(iid, w, h, name, _take(obj, ("id", "width", "height", "file_name")))


def _parse_category(obj: Any) -> Category:
    _require(isinstance(obj, dict), "category entries must be objects")
    cid = obj.get("id")
    _require(_is_int(cid), f"category id must be an integer, got {cid!r}")
    name = obj.get("name")
    _require(isinstance(name, str), f"category {cid}: name must be a string")
    return Category(cid, name, _take(obj, ("id", "name")))


_ANN_KEYS = ("id", "image_id", "category_id", "bbox", "segmentation", "area", "score", "logit")


def _parse_annotation(obj: Any) -> Annotation:
    _require(isinstance(obj, dict), "annotation entries must be objects")
    aid = obj.get("id")
    _require(_is_int(aid), f"annotation id must be an integer, got {aid!r}")
    for key in ("image_id", "category_id"):
        _require(_is_int(obj.get(key)), f"annotation {aid}: {key} must be an integer")
    if obj.get("iscrowd"):
        raise UnsupportedFormat(f"annotation {aid}: crowd annotations are not supported")
    bbox = obj.get("bbox")
    _require(isinstance(bbox, list) and len(bbox) == 4 and all(_is_num(v) for v in bbox),
             f"annotation {aid}: bbox must be four finite numbers [x, y, w, h]")
    _require(bbox[2] >= 0 and bbox[3] >= 0, f"annotation {aid}: bbox width/height must be >= 0")

    seg = obj.get("segmentation")
    mask = None
    if seg is not None:
        try:
            mask = RleMask.from_json(seg)
        except UnsupportedSegmentation as exc:
            raise UnsupportedFormat(f"annotation {aid}: {exc}") from None
        except MalformedRle as exc:
            raise DatasetError(f"annotation {aid}: malformed RLE: {exc}") from None

    area, score, logit = obj.get("area"), obj.get("score"), obj.get("logit")
    _require(area is None or (_is_num(area) and area >= 0), f"annotation {aid}: bad area {area!r}")
    _require(score is None or (_is_num(score) and 0 <= score <= 1),
             f"annotation {aid}: score must lie in [0, 1]")
    _require(logit is None or _is_num(logit), f"annotation {aid}: logit must be finite")
    return Annotation(
        id=aid,
        image_id=obj["image_id"],
        category_id=obj["category_id"],
        bbox=tuple(bbox),
        segmentation=mask,
        area=area,
        score=score,
        logit=logit,
        extra=_take(obj, _ANN_KEYS),
    )


def _unique(ids: Sequence[int], what: str) -> None:
    seen: set[int] = set()
    for i in ids:
        if i in seen:
            raise DatasetError(f"duplicate {what} id {i}")
        seen.add(i)


def parse_dataset(data: bytes | str) -> DatasetDoc:
    raw = data.encode("utf-8") if isinstance(data, str) else bytes(data)
    limit = max_doc_bytes()
    if len(raw) > limit:
        raise DocumentTooLarge(f"document is {len(raw)} bytes, limit is {limit} ({MAX_DOC_MB_ENV})")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetSyntaxError("invalid UTF-8", exc.start) from None
    try:
        top = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise DatasetSyntaxError(f"JSON syntax error: {exc.msg}", offset) from None

    _require(isinstance(top, dict), "document must be a JSON object")
    collections = {}
    for key in ("images", "annotations", "categories"):
        value = top.get(key, [])
        _require(isinstance(value, list), f"'{key}' must be an array")
        collections[key] = value

    images = [_parse_image(o) for o in collections["images"]]
    categories = [_parse_category(o) for o in collections["categories"]]
    annotations = [_parse_annotation(o) for o in collections["annotations"]]
    _unique([i.id for i in images], "image")
    _unique([c.id for c in categories], "category")
    _unique([a.id for a in annotations], "annotation")

    by_id = {img.id: img for img in images}
    cat_ids = {c.id for c in categories}
    for ann in annotations:
        img = by_id.get(ann.image_id)
        if img is None:
            raise DatasetError(f"annotation {ann.id}: unknown image_id {ann.image_id}")
        if ann.category_id not in cat_ids:
            raise DatasetError(f"annotation {ann.id}: unknown category_id {ann.category_id}")
        if ann.segmentation is not None and ann.segmentation.shape != (img.height, img.width):
            raise DatasetError(
                f"annotation {ann.id}: RLE size {list(ann.segmentation.shape)} does not match "
                f"image {img.id} ({img.height}x{img.width})"
            )
    return DatasetDoc(images, annotations, categories,
                      _take(top, ("images", "annotations", "categories")))


# -- writing ---------------------------------------------------------------------


def _image_json(img: ImageInfo) -> dict[str, Any]:
    return {**img.extra, "id": img.id, "width": img.width, "height": img.height,
            "file_name": img.file_name}


def _annotation_json(ann: Annotation) -> dict[str, Any]:
    out: dict[str, Any] = {**ann.extra, "id": ann.id, "image_id": ann.image_id,
                           "category_id": ann.category_id, "bbox": list(ann.bbox)}
    if ann.segmentation is not None:
        out["segmentation"] = ann.segmentation.to_json()
    for key in ("area", "score", "logit"):
        value = getattr(ann, key)
        if value is not None:
            out[key] = value
    return out


def to_json(doc: DatasetDoc) -> dict[str, Any]:
    return {
        **doc.extra,
        "images": [_image_json(i) for i in sorted(doc.images, key=lambda i: i.id)],
        "annotations": [_annotation_json(a) for a in sorted(doc.annotations, key=lambda a: a.id)],
        "categories": [{**c.extra, "id": c.id, "name": c.name}
                       for c in sorted(doc.categories, key=lambda c: c.id)],
    }


def dumps_canonical(obj: Any) -> bytes:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False)
    return (text + "\n").encode("utf-8")


def write_dataset(doc: DatasetDoc) -> bytes:
    return dumps_canonical(to_json(doc))


# -- splits and statistics ---------------------------------------------------------


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: Optional[int] = None

    def split_of(self) -> dict[int, str]:
        out: dict[int, str] = {}
        for name in SPLIT_NAMES:
            for iid in getattr(self, name):
                if iid in out:
                    raise DatasetError(f"image {iid} is assigned to both {out[iid]} and {name}")
                out[iid] = name
        return out

    def to_json(self) -> dict[str, Any]:
        return {"seed": self.seed, **{n: sorted(getattr(self, n)) for n in SPLIT_NAMES}}

    @classmethod
    def from_json(cls, obj: Any) -> "SplitAssignment":
        _require(isinstance(obj, dict), "split assignment must be an object")
        parts = {}
        for name in SPLIT_NAMES:
            ids = obj.get(name, [])
            _require(isinstance(ids, list) and all(_is_int(i) for i in ids),
                     f"split '{name}' must be a list of image ids")
            parts[name] = tuple(ids)
        return cls(**parts, seed=obj.get("seed"))


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Floor allocation; leftover images go to train, then val, then test."""
    sizes = [math.floor(r * n + 1e-9) for r in ratios]
    leftover = n - sum(sizes)
    k = 0
    while leftover > 0:
        sizes[k % len(sizes)] += 1
        leftover -= 1
        k += 1
    return sizes


def split_dataset(
    doc: DatasetDoc, ratios: Sequence[float] = (0.70, 0.20, 0.10), seed: int = 0
) -> SplitAssignment:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    if not doc.images:
        raise DatasetError("cannot split an empty dataset")
    ids = sorted(img.id for img in doc.images)
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[k] for k in perm]
    n_train, n_val, _ = split_sizes(len(ids), ratios)
    return SplitAssignment(
        train=tuple(sorted(shuffled[:n_train])),
        val=tuple(sorted(shuffled[n_train:n_train + n_val])),
        test=tuple(sorted(shuffled[n_train + n_val:])),
        seed=seed,
    )


def average_objects(objects: int, images: int) -> float:
    """Objects per image rounded half-up to two decimals (0.0 for no images)."""
    if images == 0:
        return 0.0
    q = (Decimal(objects) / Decimal(images)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return float(q)


@dataclass(frozen=True)
class SplitStats:
    images: int
    objects: int
    avg: float

    @classmethod
    def of(cls, images: int, objects: int) -> "SplitStats":
        return cls(images, objects, average_objects(objects, images))


@dataclass(frozen=True)
class DatasetStats:
    splits: dict[str, SplitStats]
    total: SplitStats

    def table(self) -> str:
        rows = [("split", "images", "objects", "avg")]
        for name, s in [*self.splits.items(), ("total", self.total)]:
            rows.append((name, str(s.images), str(s.objects), f"{s.avg:.2f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join(
            "  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r))
            for r in rows
        )

    def to_json(self) -> dict[str, Any]:
        out = {name: asdict(s) for name, s in self.splits.items()}
        out["total"] = asdict(self.total)
        return out


def compute_stats(doc: DatasetDoc, assignment: SplitAssignment) -> DatasetStats:
    split_of = assignment.split_of()
    images = {name: 0 for name in SPLIT_NAMES}
    objects = {name: 0 for name in SPLIT_NAMES}
    for img in doc.images:
        if img.id not in split_of:
            raise DatasetError(f"image {img.id} is not assigned to any split")
        images[split_of[img.id]] += 1
    for ann in doc.annotations:
        objects[split_of[ann.image_id]] += 1
    splits = {n: SplitStats.of(images[n], objects[n]) for n in SPLIT_NAMES}
    return DatasetStats(splits, SplitStats.of(sum(images.values()), sum(objects.values())))


# -- conversions to evaluator / bridge objects ---------------------------------------


def ground_truth(doc: DatasetDoc) -> list[GtInstance]:
    return [
        GtInstance(a.id, a.image_id, a.category_id, a.box, a.segmentation)
        for a in doc.annotations
    ]


def detections(doc: DatasetDoc) -> list[Detection]:
    out = []
    for a in doc.annotations:
        if a.score is not None:
            score = a.score
        elif a.logit is not None:
            score = sigmoid(a.logit)
        else:
            raise DatasetError(f"annotation {a.id}: prediction has neither score nor logit")
        out.append(Detection(a.image_id, a.category_id, score, a.box, a.segmentation, a.id))
    return out


def teacher_predictions(doc: DatasetDoc, source: Source) -> list[TeacherPrediction]:
    out = []
    for a in doc.annotations:
        if a.logit is not None:
            z = a.logit
        elif a.score is not None:
            z = logit_from_score(a.score)
        else:
            raise DatasetError(f"annotation {a.id}: prediction has neither score nor logit")
        out.append(TeacherPrediction(a.id, a.image_id, source, z, a.box, a.segmentation))
    return out


def merged_document(
    targets: Sequence[MergedTarget], images: Sequence[ImageInfo], category_name: str = "tree"
) -> DatasetDoc:
    """Pseudo-label document: one "tree" annotation per merged target.

    Source annotation ids are kept under ``provenance``.
    """
    anns = []
    for k, t in enumerate(targets, start=1):
        anns.append(Annotation(
            id=k,
            image_id=t.image_id,
            category_id=1,
            bbox=t.box.to_xywh(),
            segmentation=t.mask,
            area=float(t.mask.area) if t.mask is not None else None,
            score=t.p_tree,
            logit=t.z_tree,
            extra={"provenance": {"trunk": t.trunk_id, "whole": t.whole_id}},
        ))
    return DatasetDoc(list(images), anns, [Category(1, category_name)])
