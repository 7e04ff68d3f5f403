"""Command-line front end: ``granbridge {gen,merge,eval,gap,stats,split,losscheck}``.

Documents go to ``--out`` (or stdout); tables and messages go to stderr.
Exit status: 0 success, 1 failed check, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import datasetio, gradcheck
from .bridge import PairingConfig, Source, bridge_scene, filter_by_confidence
from .datasetio import DatasetDoc, dumps_canonical, parse_dataset, write_dataset
from .distill import KdConfig, conf_threshold_at
from .evaluation import EvalConfig, EvalReport, Task, evaluate, gap_report, label_agnostic_ap
from .rle import DimensionMismatch
from .scenegen import PerturbationConfig, SceneConfig, build_documents, generate_scenes

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2

GEN_FILES = ("fine_gt", "coarse_gt", "pred_trunk", "pred_whole")


class UsageError(Exception):
    pass


def _int_range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("..")
    try:
        r = (int(lo), int(hi if sep else lo))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None
    if r[0] > r[1]:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return r


def _ratios(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ratios, got {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output file (directory for gen); default stdout")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker cap for evaluation (default: all cores)")
    common.add_argument("--quiet", action="store_true", help="suppress tables on stderr")

    parser = argparse.ArgumentParser(prog="granbridge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate fixture documents")
    gen.add_argument("--trees", type=_int_range, default=(1, 5), help="tree count range LO..HI")
    gen.add_argument("--images", type=_positive_int, default=1)
    gen.add_argument("--width", type=int, default=160)
    gen.add_argument("--height", type=int, default=120)
    gen.add_argument("--box-jitter", type=float, default=0.0)
    gen.add_argument("--dilate", type=_int_range, default=(0, 0), help="dilation radius LO..HI")
    gen.add_argument("--miss-prob", type=float, default=0.0)
    gen.add_argument("--fp-rate", type=float, default=0.0)
    gen.add_argument("--logit-noise", type=float, default=0.0)

    merge = sub.add_parser("merge", parents=[common], help="bridge teacher predictions")
    merge.add_argument("--trunk", required=True, help="trunk teacher prediction document")
    merge.add_argument("--whole", required=True, help="whole-tree teacher prediction document")
    merge.add_argument("--epoch", type=float, default=0.0)
    merge.add_argument("--theta-pair", type=float, default=0.5)
    merge.add_argument("--conf-start", type=float, default=0.6)
    merge.add_argument("--conf-end", type=float, default=0.4)
    merge.add_argument("--total-epochs", type=float, default=100)

    ev = sub.add_parser("eval", parents=[common], help="COCO-style evaluation")
    ev.add_argument("--gt", required=True)
    ev.add_argument("--pred", required=True, action="append",
                    help="prediction document; give twice (trunk, whole) with --label-agnostic")
    ev.add_argument("--task", choices=[t.value for t in Task], default="bbox")
    ev.add_argument("--label-agnostic", action="store_true")
    ev.add_argument("--area-small", type=float, default=32.0**2)
    ev.add_argument("--area-medium", type=float, default=96.0**2)

    gap = sub.add_parser("gap", parents=[common], help="Sim->Real absolute/relative gap")
    gap.add_argument("--sim", type=float)
    gap.add_argument("--real", type=float)
    gap.add_argument("--sim-report")
    gap.add_argument("--real-report")
    gap.add_argument("--metric", default="ap", choices=EvalReport.METRIC_KEYS)

    stats = sub.add_parser("stats", parents=[common], help="per-split dataset statistics")
    stats.add_argument("--doc", required=True)
    stats.add_argument("--split", required=True, help="split assignment document")

    split = sub.add_parser("split", parents=[common], help="train/val/test split")
    split.add_argument("--doc", required=True)
    split.add_argument("--ratios", type=_ratios, default=(0.7, 0.2, 0.1))

    lc = sub.add_parser("losscheck", parents=[common], help="finite-difference gradient checks")
    lc.add_argument("--kernels", default=",".join(gradcheck.KERNELS))
    lc.add_argument("--samples", type=_positive_int, default=100)
    return parser


def _read_doc(path: str) -> DatasetDoc:
    return parse_dataset(Path(path).read_bytes())


def _emit(args: argparse.Namespace, payload: bytes) -> None:
    if args.out:
        Path(args.out).write_bytes(payload)
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()


def _table(args: argparse.Namespace, text: str) -> None:
    if not args.quiet:
        print(text, file=sys.stderr)


def cmd_gen(args: argparse.Namespace) -> int:
    if not args.out:
        raise UsageError("gen needs --out DIR")
    scene_cfg = SceneConfig(width=args.width, height=args.height, tree_count=args.trees,
                            seed=args.seed)
    pert = PerturbationConfig(box_jitter=args.box_jitter, dilation=args.dilate,
                              miss_prob=args.miss_prob, fp_rate=args.fp_rate,
                              logit_noise=args.logit_noise, seed=args.seed)
    docs = build_documents(generate_scenes(scene_cfg, args.images), pert, scene_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in GEN_FILES:
        (out / f"{name}.json").write_bytes(write_dataset(docs[name]))
    (out / "meta.json").write_bytes(dumps_canonical(docs["fine_gt"].extra["info"]))
    _table(args, f"wrote {len(GEN_FILES)} documents for {args.images} image(s) to {out}")
    return EXIT_OK


def _merged_images(trunk: DatasetDoc, whole: DatasetDoc) -> list[datasetio.ImageInfo]:
    images = {img.id: img for img in trunk.images}
    for img in whole.images:
        seen = images.setdefault(img.id, img)
        if (seen.width, seen.height) != (img.width, img.height):
            raise UsageError(f"image {img.id} has different sizes in the two teacher documents")
    return [images[k] for k in sorted(images)]


def cmd_merge(args: argparse.Namespace) -> int:
    trunk_doc, whole_doc = _read_doc(args.trunk), _read_doc(args.whole)
    kd = KdConfig(conf_start=args.conf_start, conf_end=args.conf_end,
                  total_epochs=args.total_epochs, warmup_epochs=0)
    threshold = conf_threshold_at(args.epoch, kd)
    pairing = PairingConfig(args.theta_pair)
    trunks = datasetio.teacher_predictions(trunk_doc, Source.TRUNK)
    wholes = datasetio.teacher_predictions(whole_doc, Source.WHOLE)
    images = _merged_images(trunk_doc, whole_doc)
    merged = []
    for img in images:
        t = [p for p in trunks if p.image_id == img.id]
        w = [p for p in wholes if p.image_id == img.id]
        merged += filter_by_confidence(bridge_scene(t, w, pairing), threshold)
    _emit(args, write_dataset(datasetio.merged_document(merged, images)))
    _table(args, f"merged {len(trunks)} trunk + {len(wholes)} whole predictions -> "
                 f"{len(merged)} targets at threshold {threshold:.3f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    gt_doc = _read_doc(args.gt)
    task = Task(args.task)
    cfg = EvalConfig(area_small=args.area_small, area_medium=args.area_medium,
                     threads=args.threads)
    image_ids = [img.id for img in gt_doc.images]
    gts = datasetio.ground_truth(gt_doc)
    if args.label_agnostic:
        if len(args.pred) != 2:
            raise UsageError("--label-agnostic needs two --pred documents (trunk, then whole)")
        trunk, whole = (datasetio.detections(_read_doc(p)) for p in args.pred)
        report = label_agnostic_ap(trunk, whole, gts, task, cfg, image_ids)
    else:
        if len(args.pred) != 1:
            raise UsageError("give one --pred document (or use --label-agnostic)")
        dets = datasetio.detections(_read_doc(args.pred[0]))
        report = evaluate(dets, gts, task, cfg, image_ids)
    _emit(args, dumps_canonical(report.to_json()))
    _table(args, report.table())
    return EXIT_OK


def _report_value(path: str, metric: str) -> float:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not a JSON report ({exc.msg})") from None
    return getattr(EvalReport.from_json(obj), metric)


def cmd_gap(args: argparse.Namespace) -> int:
    sim = args.sim if args.sim_report is None else _report_value(args.sim_report, args.metric)
    real = args.real if args.real_report is None else _report_value(args.real_report, args.metric)
    if sim is None or real is None:
        raise UsageError("gap needs --sim/--real values or --sim-report/--real-report")
    report = gap_report(sim, real)
    _emit(args, dumps_canonical(report.to_json()))
    _table(args, f"sim {sim:.3f}  real {real:.3f}  gap {report.format()}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    doc = _read_doc(args.doc)
    try:
        assignment = datasetio.SplitAssignment.from_json(
            json.loads(Path(args.split).read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.split}: not a JSON split document ({exc.msg})") from None
    stats = datasetio.compute_stats(doc, assignment)
    _emit(args, dumps_canonical(stats.to_json()))
    _table(args, stats.table())
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    assignment = datasetio.split_dataset(_read_doc(args.doc), args.ratios, args.seed)
    _emit(args, dumps_canonical(assignment.to_json()))
    _table(args, " / ".join(f"{n} {len(getattr(assignment, n))}" for n in datasetio.SPLIT_NAMES))
    return EXIT_OK


def cmd_losscheck(args: argparse.Namespace) -> int:
    names = [k.strip() for k in args.kernels.split(",") if k.strip()]
    try:
        errors = gradcheck.run_checks(names, samples=args.samples, seed=args.seed)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    failed = [k for k, e in errors.items() if not e < gradcheck.TOLERANCE]
    lines = [f"{k:<5} max rel err {e:.3e}  {'FAIL' if k in failed else 'ok'}"
             for k, e in errors.items()]
    _table(args, "\n".join(lines))
    _emit(args, dumps_canonical({"max_relative_error": errors, "tolerance": gradcheck.TOLERANCE,
                                 "failed": failed}))
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen, "merge": cmd_merge, "eval": cmd_eval, "gap": cmd_gap,
    "stats": cmd_stats, "split": cmd_split, "losscheck": cmd_losscheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, KeyError, DimensionMismatch, OSError) as exc:
        print(f"granbridge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
