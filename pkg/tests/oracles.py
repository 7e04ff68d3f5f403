"""Independent brute-force references used by the test suite.

Nothing here calls into the code under test beyond reading plain dataclass
fields: masks are decoded by a pixel-by-pixel scan, IoUs are counted on dense
grids, and AP is computed from the raw precision/recall list.
"""

from __future__ import annotations

import itertools

import numpy as np


def scan_decode(height, width, counts):
    """Column-major RLE decode, filling one run at a time."""
    flat = np.zeros(height * width, dtype=bool)
    pos, value = 0, False
    for run in counts:
        flat[pos:pos + run] = value
        pos += run
        value = not value
    assert pos == height * width
    # flat index p is pixel (row p % height, column p // height)
    return flat.reshape(width, height).T.copy()


def scan_encode(grid):
    grid = np.asarray(grid, dtype=bool)
    h, w = grid.shape
    counts, value, run = [], False, 0
    for c in range(w):
        for r in range(h):
            if grid[r, c] == value:
                run += 1
            else:
                counts.append(run)
                value, run = grid[r, c], 1
    counts.append(run)
    return counts


def grid_box_iou(a, b, resolution=1.0):
    """IoU by counting cell centres of a lattice covering both boxes."""
    x0 = min(a[0], b[0])
    y0 = min(a[1], b[1])
    x1 = max(a[2], b[2])
    y1 = max(a[3], b[3])
    nx = int(round((x1 - x0) / resolution))
    ny = int(round((y1 - y0) / resolution))
    if nx == 0 or ny == 0:
        return 0.0
    xs = x0 + (np.arange(nx) + 0.5) * resolution
    ys = y0 + (np.arange(ny) + 0.5) * resolution
    X, Y = np.meshgrid(xs, ys)
    in_a = (X > a[0]) & (X < a[2]) & (Y > a[1]) & (Y < a[3])
    in_b = (X > b[0]) & (X < b[2]) & (Y > b[1]) & (Y < b[3])
    union = (in_a | in_b).sum()
    return float((in_a & in_b).sum() / union) if union else 0.0


def lexicographic_assignment(ious, threshold):
    """Best assignment of score-ordered rows to columns by exhaustive search.

    Rows earlier in the order take priority; each row prefers the highest IoU,
    then the lowest column. Returns the column per row or -1.
    """
    n_det, n_gt = len(ious), len(ious[0]) if len(ious) else 0
    best, best_key = None, None
    options = [[-1] + [g for g in range(n_gt) if ious[d][g] >= threshold] for d in range(n_det)]
    for combo in itertools.product(*options):
        used = [g for g in combo if g >= 0]
        if len(used) != len(set(used)):
            continue
        key = tuple((ious[d][g], -g) if g >= 0 else (-1.0, 0) for d, g in enumerate(combo))
        if best_key is None or key > best_key:
            best, best_key = combo, key
    return list(best) if best is not None else []


def naive_ap(ranked_tp, num_gt):
    if num_gt == 0 or not ranked_tp:
        return 0.0
    precision, recall = [], []
    tp = fp = 0
    for flag in ranked_tp:
        tp += flag
        fp += not flag
        precision.append(tp / (tp + fp))
        recall.append(tp / num_gt)
    total = 0.0
    for i in range(101):
        r = i / 100
        total += max((p for p, rc in zip(precision, recall) if rc >= r), default=0.0)
    return total / 101


def _size(area, small, medium):
    if area < small:
        return "s"
    if area < medium:
        return "m"
    return "l"


def reference_evaluate(dets, gts, task, thresholds, max_dets=(100, 300, 1000),
                       small=1024.0, medium=9216.0):
    """Naive COCO-style evaluator returning the report fields as a dict."""
    segm = task == "segm"
    dense = {}

    def grid_of(obj):
        key = id(obj.mask)
        if key not in dense:
            dense[key] = scan_decode(obj.mask.height, obj.mask.width, obj.mask.counts)
        return dense[key]

    iou_memo = {}

    def iou(d, g):
        key = (id(d), id(g))
        if key not in iou_memo:
            iou_memo[key] = _iou(d, g)
        return iou_memo[key]

    def _iou(d, g):
        if segm:
            a, b = grid_of(d), grid_of(g)
            union = int((a | b).sum())
            return int((a & b).sum()) / union if union else 0.0
        ax0, ay0, ax1, ay1 = d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max
        bx0, by0, bx1, by1 = g.box.x_min, g.box.y_min, g.box.x_max, g.box.y_max
        iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
        ih = max(0.0, min(ay1, by1) - max(ay0, by0))
        inter = iw * ih
        union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
        return inter / union if union > 0 else 0.0

    def det_area(d):
        if segm:
            return float(grid_of(d).sum())
        return (d.box.x_max - d.box.x_min) * (d.box.y_max - d.box.y_min)

    def gt_area(g):
        if g.mask is not None:
            return float(grid_of(g).sum())
        return (g.box.x_max - g.box.x_min) * (g.box.y_max - g.box.y_min)

    images = sorted({d.image_id for d in dets} | {g.image_id for g in gts})
    cats = sorted({d.category for d in dets} | {g.category for g in gts}, key=str)
    indexed = list(enumerate(dets))

    def cell(cat, rng, t, k):
        num_gt = 0
        pool = []
        for img in images:
            g_list = [g for g in gts if g.image_id == img and g.category == cat]
            d_list = [(i, d) for i, d in indexed if d.image_id == img and d.category == cat]
            d_list.sort(key=lambda p: (-p[1].score, p[0]))
            d_list = d_list[:k]
            ign = [rng != "all" and _size(gt_area(g), small, medium) != rng for g in g_list]
            num_gt += ign.count(False)
            taken = [False] * len(g_list)
            for i, d in d_list:
                cands = [(ign[j], -iou(d, g), j) for j, g in enumerate(g_list)
                         if not taken[j] and iou(d, g) >= t]
                if cands:
                    ig, _, j = min(cands)
                    taken[j] = True
                    if ig:
                        continue
                    pool.append((-d.score, img, i, True))
                else:
                    if rng != "all" and _size(det_area(d), small, medium) != rng:
                        continue
                    pool.append((-d.score, img, i, False))
        if num_gt == 0:
            return -1.0, -1.0
        pool.sort()
        flags = [p[3] for p in pool]
        return naive_ap(flags, num_gt), sum(flags) / num_gt

    def mean_valid(vals):
        vals = [v for v in vals if v != -1.0]
        return sum(vals) / len(vals) if vals else -1.0

    top = max(max_dets)
    per_iou = [mean_valid([cell(c, "all", t, top)[0] for c in cats]) for t in thresholds]
    out = {"ap_per_iou": per_iou, "ap": mean_valid(per_iou)}
    out["ap50"] = per_iou[list(thresholds).index(0.5)]
    out["ap75"] = per_iou[list(thresholds).index(0.75)]
    for name, rng in (("s", "s"), ("m", "m"), ("l", "l")):
        out[f"ap_{name}"] = mean_valid([cell(c, rng, t, top)[0] for t in thresholds for c in cats])
        out[f"ar_{name}"] = mean_valid([cell(c, rng, t, top)[1] for t in thresholds for c in cats])
    for k in (100, 300, 1000):
        out[f"ar{k}"] = mean_valid([cell(c, "all", t, k)[1] for t in thresholds for c in cats])
    return out
