"""Label-agnostic AP of two raw teachers vs AP of their bridged targets.

For each noise level, noisy trunk and whole-tree teachers are simulated on
generated scenes. Both are scored against coarse "tree" ground truth, first
as a pooled detection set, then after pairing and merging into one target
per tree. The last columns show how many merged targets survive the
confidence threshold at the first and last epoch.

    python scripts/bridge_demo.py --images 40 --task segm
"""

import argparse

from granbridge.bridge import Source, bridge_scene, filter_by_confidence, sigmoid
from granbridge.distill import KdConfig, conf_threshold_at
from granbridge.evaluation import Detection, EvalConfig, Task, evaluate, label_agnostic_ap
from granbridge.scenegen import PerturbationConfig, SceneConfig, coarsen_to_tree, generate_scenes, simulate_teacher

NOISE_LEVELS = [
    ("clean", PerturbationConfig()),
    ("mild", PerturbationConfig(box_jitter=0.03, dilation=(0, 1), miss_prob=0.05, fp_rate=0.5,
                                logit_noise=1.0)),
    ("moderate", PerturbationConfig(box_jitter=0.08, dilation=(0, 2), miss_prob=0.15, fp_rate=1.5,
                                    logit_noise=2.0)),
    ("heavy", PerturbationConfig(box_jitter=0.15, dilation=(1, 3), miss_prob=0.3, fp_rate=3.0,
                                 logit_noise=3.0)),
]


def as_detection(p) -> Detection:
    return Detection(p.image_id, "tree", sigmoid(p.logit), p.box, p.mask)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--images", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--task", choices=["bbox", "segm"], default="segm")
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args()

    task = Task(args.task)
    cfg = EvalConfig(threads=args.threads)
    kd = KdConfig()
    scenes = generate_scenes(SceneConfig(seed=args.seed, tree_count=(2, 6)), args.images)
    coarse = [g for s in scenes for g in coarsen_to_tree(s)]
    image_ids = [s.image_id for s in scenes]
    t_start, t_end = conf_threshold_at(0, kd), conf_threshold_at(kd.total_epochs, kd)

    print(f"{args.images} scenes, {len(coarse)} trees, task {task.value}")
    print(f"{'noise':<9} {'pooled AP':>9} {'merged AP':>9} {'targets':>7} "
          f"{'kept@' + format(t_start, '.1f'):>8} {'kept@' + format(t_end, '.1f'):>8}")
    for name, base in NOISE_LEVELS:
        pert = PerturbationConfig(**{**base.__dict__, "seed": args.seed})
        trunks, wholes, merged = [], [], []
        for s in scenes:
            t = simulate_teacher(s, Source.TRUNK, pert)
            w = simulate_teacher(s, Source.WHOLE, pert)
            trunks += t
            wholes += w
            merged += bridge_scene(t, w)
        pooled = label_agnostic_ap([as_detection(p) for p in trunks],
                                   [as_detection(p) for p in wholes], coarse, task, cfg, image_ids)
        merged_dets = [Detection(m.image_id, "tree", m.p_tree, m.box, m.mask) for m in merged]
        bridged = evaluate(merged_dets, coarse, task, cfg, image_ids)
        print(f"{name:<9} {pooled.ap:9.3f} {bridged.ap:9.3f} {len(merged):7d} "
              f"{len(filter_by_confidence(merged, t_start)):8d} "
              f"{len(filter_by_confidence(merged, t_end)):8d}")


if __name__ == "__main__":
    main()
