"""Procedural toy forests with fine (trunk / whole tree) and coarse (tree)
ground truth, plus a perturbation model standing in for imperfect teachers.

A tree is a trunk rectangle with an elliptical crown sitting on the trunk top;
the whole-tree mask is their union, so every trunk lies inside its tree.
Random numbers come from ``numpy.random.default_rng`` (PCG64) seeded with
``(seed, image_id[, teacher])``, so any scene can be rebuilt on its own.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .bridge import Source, TeacherPrediction, sigmoid
from .datasetio import Annotation, Category, DatasetDoc, ImageInfo
from .evaluation import GtInstance
from .geometry import Box, box_contains, enclosing_box
from .rle import RleMask, dilate, mask_bbox, mask_union, rle_decode, rle_encode

BASE_LOGIT = 6.0
RNG_NAME = "numpy.random.default_rng (PCG64)"

_SOURCE_STREAM = {Source.TRUNK: 0, Source.WHOLE: 1}


class PlacementError(RuntimeError):
    pass


def _check_range(name: str, r: tuple[float, float]) -> None:
    if len(r) != 2 or r[0] > r[1] or r[0] < 0:
        raise ValueError(f"{name} must be a non-empty range (lo, hi) with lo >= 0, got {r}")


@dataclass(frozen=True)
class SceneConfig:
    width: int = 160
    height: int = 120
    tree_count: tuple[int, int] = (1, 5)
    trunk_width: tuple[int, int] = (3, 8)
    trunk_height: tuple[int, int] = (10, 30)
    crown_radius: tuple[int, int] = (6, 24)
    min_separation: int = 2
    seed: int = 0
    max_attempts: int = 200

    def __post_init__(self) -> None:
        for name in ("tree_count", "trunk_width", "trunk_height", "crown_radius"):
            _check_range(name, getattr(self, name))
        if self.trunk_width[0] < 1 or self.trunk_height[0] < 1 or self.crown_radius[0] < 1:
            raise ValueError("trunk and crown sizes must be at least 1 px")
        widest = max(self.trunk_width[1], 2 * self.crown_radius[1])
        tallest = self.trunk_height[1] + self.crown_radius[1] + self.crown_radius[1] // 2
        if widest + 1 > self.width or tallest > self.height:
            raise ValueError("largest tree does not fit on the canvas")
        if self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")


@dataclass(frozen=True)
class PerturbationConfig:
    box_jitter: float = 0.0
    dilation: tuple[int, int] = (0, 0)
    miss_prob: float = 0.0
    fp_rate: float = 0.0
    logit_noise: float = 0.0
    base_logit: float = BASE_LOGIT
    fp_logit: float = -2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ValueError("miss_prob must lie in [0, 1]")
        if self.fp_rate < 0 or self.box_jitter < 0 or self.logit_noise < 0:
            raise ValueError("fp_rate, box_jitter and logit_noise must be >= 0")
        _check_range("dilation", self.dilation)


@dataclass(frozen=True)
class Scene:
    """One image; ``trunks[i]`` and ``wholes[i]`` belong to tree ``i``."""

    image_id: int
    width: int
    height: int
    trunks: tuple[GtInstance, ...]
    wholes: tuple[GtInstance, ...]

    @property
    def image(self) -> ImageInfo:
        return ImageInfo(self.image_id, self.width, self.height, f"scene_{self.image_id:05d}.png")


def _tree_masks(cfg: SceneConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    tw = int(rng.integers(cfg.trunk_width[0], cfg.trunk_width[1] + 1))
    th = int(rng.integers(cfg.trunk_height[0], cfg.trunk_height[1] + 1))
    rx = int(rng.integers(cfg.crown_radius[0], cfg.crown_radius[1] + 1))
    ry = int(rng.integers(cfg.crown_radius[0], cfg.crown_radius[1] + 1))
    half = max(rx, (tw + 1) // 2)
    tx = int(rng.integers(half - tw // 2, cfg.width - half - tw // 2 - (tw % 2) + 1))
    # crown centre sits ry//2 above the trunk top so the crown overlaps the trunk
    lift = ry // 2
    base = int(rng.integers(th + ry + lift, cfg.height + 1))

    trunk = np.zeros((cfg.height, cfg.width), dtype=bool)
    trunk[base - th:base, tx:tx + tw] = True
    cx, cy = tx + tw / 2.0, float(base - th - lift)
    rows, cols = np.ogrid[:cfg.height, :cfg.width]
    crown = ((cols + 0.5 - cx) / rx) ** 2 + ((rows + 0.5 - cy) / ry) ** 2 <= 1.0
    return trunk, trunk | crown


def _expand(b: Box, margin: float) -> Box:
    return Box(b.x_min - margin, b.y_min - margin, b.x_max + margin, b.y_max + margin)


def _overlaps(a: Box, b: Box) -> bool:
    return a.x_min < b.x_max and b.x_min < a.x_max and a.y_min < b.y_max and b.y_min < a.y_max


def generate_scene(cfg: SceneConfig, image_id: int = 1) -> Scene:
    rng = np.random.default_rng([cfg.seed, image_id])
    count = int(rng.integers(cfg.tree_count[0], cfg.tree_count[1] + 1))
    placed: list[Box] = []
    trunks: list[GtInstance] = []
    wholes: list[GtInstance] = []
    for i in range(count):
        for _ in range(cfg.max_attempts):
            trunk_mask, whole_mask = _tree_masks(cfg, rng)
            whole_rle = rle_encode(whole_mask)
            extent = mask_bbox(whole_rle)
            if all(not _overlaps(_expand(extent, cfg.min_separation), b) for b in placed):
                break
        else:
            raise PlacementError(
                f"could not place tree {i + 1} of {count} in image {image_id} "
                f"after {cfg.max_attempts} attempts"
            )
        placed.append(extent)
        trunk_rle = rle_encode(trunk_mask)
        trunks.append(GtInstance(2 * i, image_id, "trunk", mask_bbox(trunk_rle), trunk_rle))
        wholes.append(GtInstance(2 * i + 1, image_id, "whole", extent, whole_rle))
    return Scene(image_id, cfg.width, cfg.height, tuple(trunks), tuple(wholes))


def generate_scenes(cfg: SceneConfig, n_images: int) -> list[Scene]:
    return [generate_scene(cfg, image_id) for image_id in range(1, n_images + 1)]


def coarsen_to_tree(scene: Scene) -> list[GtInstance]:
    """One "tree" instance per tree: mask union and enclosing box of its parts."""
    out = []
    for k, (t, w) in enumerate(zip(scene.trunks, scene.wholes)):
        out.append(GtInstance(k, scene.image_id, "tree", enclosing_box(t.box, w.box),
                              mask_union(t.mask, w.mask)))
    return out


def _jitter_box(b: Box, scale: float, rng: np.random.Generator, width: int, height: int) -> Box:
    w, h = b.x_max - b.x_min, b.y_max - b.y_min
    noise = rng.normal(0.0, 1.0, size=4) * scale * np.array([w, h, w, h])
    x0, y0, x1, y1 = np.array(b.as_tuple()) + noise
    x0, x1 = sorted((float(np.clip(x0, 0, width)), float(np.clip(x1, 0, width))))
    y0, y1 = sorted((float(np.clip(y0, 0, height)), float(np.clip(y1, 0, height))))
    return Box(x0, y0, x1, y1)


def simulate_teacher(
    scene: Scene, which: Source, cfg: PerturbationConfig = PerturbationConfig()
) -> list[TeacherPrediction]:
    """Noisy predictions of one teacher for a scene.

    Each ground-truth instance is dropped with ``miss_prob``; survivors get a
    jittered box, a dilated mask and logit ``base_logit + noise``. A
    Poisson(``fp_rate``) number of spurious rectangles with logits around
    ``fp_logit`` is appended.
    """
    rng = np.random.default_rng([cfg.seed, scene.image_id, _SOURCE_STREAM[which]])
    source_gt = scene.trunks if which is Source.TRUNK else scene.wholes
    out = []
    for gt in source_gt:
        missed = rng.random() < cfg.miss_prob
        noise = rng.normal(0.0, 1.0)
        radius = int(rng.integers(cfg.dilation[0], cfg.dilation[1] + 1))
        box = gt.box
        if cfg.box_jitter > 0:
            box = _jitter_box(box, cfg.box_jitter, rng, scene.width, scene.height)
        if missed:
            continue
        mask = gt.mask
        if radius > 0:
            mask = rle_encode(dilate(rle_decode(mask), radius))
        out.append(TeacherPrediction(
            f"{which.value}-{gt.id}", scene.image_id, which,
            cfg.base_logit + cfg.logit_noise * noise, box, mask,
        ))

    for k in range(int(rng.poisson(cfg.fp_rate))):
        w = int(rng.integers(2, max(3, scene.width // 3) + 1))
        h = int(rng.integers(2, max(3, scene.height // 3) + 1))
        w, h = min(w, scene.width), min(h, scene.height)
        x = int(rng.integers(0, scene.width - w + 1))
        y = int(rng.integers(0, scene.height - h + 1))
        dense = np.zeros((scene.height, scene.width), dtype=bool)
        dense[y:y + h, x:x + w] = True
        z = cfg.fp_logit + cfg.logit_noise * rng.normal(0.0, 1.0)
        out.append(TeacherPrediction(
            f"{which.value}-fp{k}", scene.image_id, which, z,
            Box(float(x), float(y), float(x + w), float(y + h)), rle_encode(dense),
        ))
    return out


# -- documents -------------------------------------------------------------------


def _annotation(aid: int, image_id: int, category_id: int, box: Box, mask: Optional[RleMask],
                **extra) -> Annotation:
    return Annotation(aid, image_id, category_id, box.to_xywh(), mask,
                      area=float(mask.area) if mask is not None else None, **extra)


def build_documents(
    scenes: Sequence[Scene],
    perturbation: PerturbationConfig = PerturbationConfig(),
    scene_cfg: Optional[SceneConfig] = None,
) -> dict[str, DatasetDoc]:
    """Fine GT, coarse GT and the two teacher prediction documents for ``scenes``."""
    info = {"generator": "granbridge.scenegen", "rng": RNG_NAME,
            "perturbation": asdict(perturbation)}
    if scene_cfg is not None:
        info["scene_config"] = asdict(scene_cfg)
        info["seed"] = scene_cfg.seed
    images = [s.image for s in scenes]
    fine: list[Annotation] = []
    coarse: list[Annotation] = []
    preds: dict[Source, list[Annotation]] = {Source.TRUNK: [], Source.WHOLE: []}
    for scene in scenes:
        for tree, (t, w) in enumerate(zip(scene.trunks, scene.wholes)):
            fine.append(_annotation(len(fine) + 1, scene.image_id, 1, t.box, t.mask,
                                    extra={"tree_id": tree}))
            fine.append(_annotation(len(fine) + 1, scene.image_id, 2, w.box, w.mask,
                                    extra={"tree_id": tree}))
        for g in coarsen_to_tree(scene):
            coarse.append(_annotation(len(coarse) + 1, scene.image_id, 1, g.box, g.mask))
        for source in (Source.TRUNK, Source.WHOLE):
            for p in simulate_teacher(scene, source, perturbation):
                anns = preds[source]
                anns.append(_annotation(len(anns) + 1, scene.image_id,
                                        1 if source is Source.TRUNK else 2, p.box, p.mask,
                                        score=sigmoid(p.logit), logit=p.logit))
    trunk_cat, whole_cat = Category(1, "trunk"), Category(2, "whole")
    meta = {"info": info}
    return {
        "fine_gt": DatasetDoc(images, fine, [trunk_cat, whole_cat], dict(meta)),
        "coarse_gt": DatasetDoc(images, coarse, [Category(1, "tree")], dict(meta)),
        "pred_trunk": DatasetDoc(images, preds[Source.TRUNK], [trunk_cat], dict(meta)),
        "pred_whole": DatasetDoc(images, preds[Source.WHOLE], [whole_cat], dict(meta)),
    }
