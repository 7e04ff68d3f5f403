"""Granularity bridge: fold trunk and whole-tree teacher outputs into
single-class "Tree" targets.

Logits are merged with a log-sum-exp, masks with set union and boxes with the
enclosing box. Instances from the two teachers are first paired by how much of
the trunk box lies inside the whole-tree box.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

from .geometry import Box, box_area, enclosing_box, intersection_area
from .rle import DimensionMismatch, RleMask, mask_union

# Keeps p strictly inside (0, 1) where the float sigmoid would round to 0 or 1.
_P_MIN = math.ulp(0.0)
_P_MAX = 1.0 - 2.0**-53

SCORE_CLAMP = 1e-6


class Source(enum.Enum):
    TRUNK = "trunk"
    WHOLE = "whole"


@dataclass(frozen=True)
class TeacherPrediction:
    instance_id: Hashable
    image_id: Hashable
    source: Source
    logit: float
    box: Box
    mask: Optional[RleMask] = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.logit):
            raise ValueError(f"logit must be finite (instance {self.instance_id})")


@dataclass(frozen=True)
class MergedTarget:
    image_id: Hashable
    z_tree: float
    p_tree: float
    box: Box
    mask: Optional[RleMask]
    trunk_id: Optional[Hashable] = None
    whole_id: Optional[Hashable] = None

    @property
    def provenance(self) -> tuple[Hashable, ...]:
        return tuple(i for i in (self.trunk_id, self.whole_id) if i is not None)


@dataclass(frozen=True)
class PairingConfig:
    containment_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.containment_threshold <= 1.0:
            raise ValueError("containment_threshold must lie in [0, 1]")


Pair = tuple[Optional[TeacherPrediction], Optional[TeacherPrediction]]


def lse_merge(z_trunk: float, z_whole: float) -> float:
    """log(exp(a) + exp(b)), shifted by the max so |z| ~ 1e3 stays finite.

    ``-inf`` acts as the identity: ``lse_merge(z, -inf) == z``.
    """
    hi = z_trunk if z_trunk >= z_whole else z_whole
    if hi == -math.inf:
        return -math.inf
    return hi + math.log1p(math.exp(-abs(z_trunk - z_whole)))


def sigmoid(z: float) -> float:
    # a single rounding-monotone formula, so z1 <= z2 implies sigmoid(z1) <= sigmoid(z2)
    # exactly; a two-branch form can invert neighbours by one ulp
    try:
        return 1.0 / (1.0 + math.exp(-z))
    except OverflowError:  # z < ~-709.8: below every double the formula can produce
        return 0.0


def tree_prob(z_tree: float) -> float:
    return min(max(sigmoid(z_tree), _P_MIN), _P_MAX)


def logit_from_score(score: float) -> float:
    """Inverse sigmoid of a detector score clamped to [1e-6, 1 - 1e-6]."""
    s = min(max(score, SCORE_CLAMP), 1.0 - SCORE_CLAMP)
    return math.log(s) - math.log1p(-s)


def containment(trunk_box: Box, whole_box: Box) -> float:
    """Fraction of the trunk box covered by the whole-tree box."""
    area = box_area(trunk_box)
    if area <= 0:
        return 0.0
    return intersection_area(trunk_box, whole_box) / area


def _single_image(preds: Sequence[TeacherPrediction]) -> None:
    ids = {p.image_id for p in preds}
    if len(ids) > 1:
        raise ValueError(f"predictions span several images: {sorted(map(str, ids))}")


def pair_instances(
    trunks: Sequence[TeacherPrediction],
    wholes: Sequence[TeacherPrediction],
    cfg: PairingConfig = PairingConfig(),
) -> list[Pair]:
    """Greedy one-to-one pairing by containment, highest first.

    Candidate pairs are visited in descending containment (ties by trunk index,
    then whole index); a pair is accepted when both sides are still free and the
    containment reaches the threshold. Output lists the wholes in input order
    (with their trunk, if any), then the leftover trunks in input order.
    """
    _single_image([*trunks, *wholes])
    candidates = []
    for i, t in enumerate(trunks):
        for j, w in enumerate(wholes):
            c = containment(t.box, w.box)
            if c >= cfg.containment_threshold and c > 0:
                candidates.append((-c, i, j))
    candidates.sort()
    trunk_of_whole: dict[int, int] = {}
    used_trunks: set[int] = set()
    for _, i, j in candidates:
        if i in used_trunks or j in trunk_of_whole:
            continue
        trunk_of_whole[j] = i
        used_trunks.add(i)

    pairs: list[Pair] = []
    for j, w in enumerate(wholes):
        i = trunk_of_whole.get(j)
        pairs.append((trunks[i] if i is not None else None, w))
    for i, t in enumerate(trunks):
        if i not in used_trunks:
            pairs.append((t, None))
    return pairs


def merge_pair(pair: Pair) -> MergedTarget:
    trunk, whole = pair
    if trunk is None and whole is None:
        raise ValueError("cannot merge an empty pair")
    if trunk is None or whole is None:
        lone = trunk if trunk is not None else whole
        return MergedTarget(
            image_id=lone.image_id,
            z_tree=lone.logit,
            p_tree=tree_prob(lone.logit),
            box=lone.box,
            mask=lone.mask,
            trunk_id=trunk.instance_id if trunk is not None else None,
            whole_id=whole.instance_id if whole is not None else None,
        )

    if trunk.mask is not None and whole.mask is not None:
        if trunk.mask.shape != whole.mask.shape:
            raise DimensionMismatch(
                f"trunk {trunk.instance_id} and whole {whole.instance_id} masks differ in size"
            )
        mask = mask_union(trunk.mask, whole.mask)
    else:
        mask = trunk.mask if trunk.mask is not None else whole.mask
    z = lse_merge(trunk.logit, whole.logit)
    return MergedTarget(
        image_id=trunk.image_id,
        z_tree=z,
        p_tree=tree_prob(z),
        box=enclosing_box(trunk.box, whole.box),
        mask=mask,
        trunk_id=trunk.instance_id,
        whole_id=whole.instance_id,
    )


def bridge_scene(
    trunks: Sequence[TeacherPrediction],
    wholes: Sequence[TeacherPrediction],
    cfg: PairingConfig = PairingConfig(),
) -> list[MergedTarget]:
    return [merge_pair(p) for p in pair_instances(trunks, wholes, cfg)]


def filter_by_confidence(targets: Sequence[MergedTarget], threshold: float) -> list[MergedTarget]:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return [t for t in targets if t.p_tree >= threshold]
