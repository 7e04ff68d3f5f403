"""Split a dataset document 70/20/10 and print per-split object statistics.

Without ``--doc`` a synthetic forest of ``--images`` scenes is generated first.

    python scripts/dataset_stats.py --images 200 --trees 5..15
    python scripts/dataset_stats.py --doc fixtures/fine_gt.json --seed 3
"""

import argparse
from pathlib import Path

from granbridge.cli import _int_range
from granbridge.datasetio import compute_stats, parse_dataset, split_dataset
from granbridge.scenegen import SceneConfig, build_documents, generate_scenes


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--doc", type=Path)
    parser.add_argument("--images", type=int, default=200)
    parser.add_argument("--trees", type=_int_range, default=(5, 15))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if args.doc is not None:
        doc = parse_dataset(args.doc.read_bytes())
    else:
        cfg = SceneConfig(width=640, height=360, tree_count=args.trees, seed=args.seed)
        doc = build_documents(generate_scenes(cfg, args.images), scene_cfg=cfg)["coarse_gt"]
    stats = compute_stats(doc, split_dataset(doc, seed=args.seed))
    print(stats.table())


if __name__ == "__main__":
    main()
