"""Command-line entry point: ``dronedet <command> ...``.

Every command exits 0 on success. Failures print one JSON line
``{"error": <type>, "message": <text>}`` to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .augmentation import (
    AugmentConfig,
    Label,
    Sample,
    geometric_distort,
    hsv_distort,
    is_tiny,
    mask_tiny_labels,
    mixup,
    mosaic,
    sample_mixup_ratio,
)
from .evaluation import MAX_DETS, GroundTruthBox, confusion_matrix_dataset, evaluate
from .fusion import FusionConfig, ModelPrediction, class_weights, nms, soft_nms, tta_fuse, tta_views, wbf
from .geometry import ImageSize, ScoredBox, ViewTransform
from .io.detections import flatten, group_by_image, read_detections_file, write_detections
from .io.pnm import image_size, read_image, write_image
from .io.stats import dataset_stats
from .io.visdrone import (
    CATEGORY_NAMES,
    EVAL_CLASSES,
    parse_visdrone,
    read_annotation_dir,
    serialize_visdrone,
)
from .rescore import PatchClassifier, RescorePolicy, build_patch_dataset, rescore_detections, train_tiny_classifier

IMAGE_SUFFIXES = (".ppm", ".pgm")


class CliError(Exception):
    pass


# -- helpers --------------------------------------------------------------------

def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _find_image(images_dir: Path, image_id: str) -> Path:
    for suffix in IMAGE_SUFFIXES:
        p = images_dir / f"{image_id}{suffix}"
        if p.exists():
            return p
    raise CliError(f"no PPM/PGM image for {image_id!r} in {images_dir}")


def _parse_size(text: str) -> ImageSize:
    try:
        w, h = text.lower().split("x")
        return ImageSize(int(w), int(h))
    except ValueError:
        raise CliError(f"image size must look like WIDTHxHEIGHT, got {text!r}") from None


def _gt_by_image(ann_dir) -> Dict[str, List[GroundTruthBox]]:
    out = {}
    for img, records in read_annotation_dir(ann_dir).items():
        out[img] = [g for g in (r.to_ground_truth() for r in records) if g is not None]
    return out


def _eval_dets(path) -> Dict[str, List[ScoredBox]]:
    by_image = group_by_image(read_detections_file(path))
    return {img: [d for d in dets if d.class_id in EVAL_CLASSES] for img, dets in by_image.items()}


def _sample_from(image_path: Path, ann_path: Optional[Path]) -> Sample:
    img = read_image(image_path)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    labels = []
    if ann_path is not None and ann_path.exists():
        for r in parse_visdrone(ann_path.read_text()):
            labels.append(Label(r.category, r.box, ignore=r.ignore))
    return Sample(img, labels)


def _parse_range(text: str) -> List[float]:
    try:
        lo, step, hi = (float(t) for t in text.split(":"))
    except ValueError:
        raise CliError(f"IoU range must look like START:STEP:STOP, got {text!r}") from None
    n = int(round((hi - lo) / step)) + 1
    if n < 1 or step <= 0:
        raise CliError(f"empty IoU range {text!r}")
    return [round(lo + i * step, 10) for i in range(n)]


# -- commands ---------------------------------------------------------------------

def cmd_analyze(args) -> None:
    annotations = read_annotation_dir(args.ann_dir)
    fixed = _parse_size(args.image_size) if args.image_size else None
    sized = {}
    for img, records in annotations.items():
        if args.images:
            size = ImageSize(*image_size(_find_image(Path(args.images), img)))
        elif fixed is not None:
            size = fixed
        else:
            raise CliError("image sizes are needed: pass --images DIR or --image-size WxH")
        sized[img] = (size, records)
    stats = dataset_stats(sized, args.min_px, args.ref_long_side)
    sys.stdout.write(stats.to_text())
    if args.json:
        Path(args.json).write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_mask_tiny(args) -> None:
    image_path, ann_path = Path(args.image), Path(args.annotations)
    sample = _sample_from(image_path, ann_path)
    masked = mask_tiny_labels(sample, args.min_px, args.ref_long_side)
    records = parse_visdrone(ann_path.read_text())
    kept = [r for r in records if r.ignore or not is_tiny(r.box, sample.size, args.min_px, args.ref_long_side)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_image(out / f"{image_path.stem}.ppm", masked.image)
    (out / f"{ann_path.stem}.txt").write_text(serialize_visdrone(kept))
    sys.stdout.write(json.dumps({"masked": len(records) - len(kept), "kept": len(kept)}) + "\n")


def _augment_config(cfg: dict) -> AugmentConfig:
    cfg = dict(cfg)
    cfg.pop("ops", None)
    if "mosaic_output" in cfg:
        cfg["mosaic_output"] = ImageSize(*cfg["mosaic_output"])
    for key in ("hsv_gains", "scale"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    try:
        return AugmentConfig(**cfg)
    except TypeError as e:
        raise CliError(f"bad augmentation config: {e}") from None


def cmd_augment(args) -> None:
    raw = json.loads(Path(args.config).read_text())
    ops = raw.get("ops", ["mosaic", "mixup", "affine", "hsv"])
    unknown = set(ops) - {"mosaic", "mixup", "affine", "hsv"}
    if unknown:
        raise CliError(f"unknown augmentation ops {sorted(unknown)}")
    cfg = _augment_config(raw)
    samples = [_sample_from(Path(p), Path(p).with_suffix(".txt")) for p in args.samples]
    if not samples:
        raise CliError("no input samples")
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def base() -> Sample:
        if "mosaic" in ops:
            picks = rng.integers(0, len(samples), size=4)
            return mosaic([samples[i] for i in picks], cfg, rng)
        return samples[int(rng.integers(0, len(samples)))]

    for i in range(args.count):
        s = base()
        if "mixup" in ops:
            s = mixup(s, base(), sample_mixup_ratio(rng, cfg.mixup_beta))
        if "affine" in ops:
            s = geometric_distort(s, cfg, rng)
        if "hsv" in ops:
            s = hsv_distort(s, cfg.hsv_gains, rng)
        stem = f"aug_{i:04d}"
        write_image(out / f"{stem}.ppm", s.image)
        lines = [json.dumps({"class_id": l.class_id, "box": list(l.box.as_tuple()),
                             "weight": l.weight, "ignore": l.ignore}) for l in s.labels]
        (out / f"{stem}.labels.jsonl").write_text("".join(l + "\n" for l in lines))


def _fusion_config(args) -> FusionConfig:
    return FusionConfig(
        iou_threshold=args.iou_thr,
        score_threshold=args.score_thr,
        softnms_mode=getattr(args, "softnms_mode", "gaussian"),
        softnms_sigma=getattr(args, "sigma", 0.5),
        wbf_conf_rescale=getattr(args, "conf_rescale", False),
        class_agnostic=args.class_agnostic,
    )


def cmd_fuse(args) -> None:
    cfg = _fusion_config(args)
    per_file = [group_by_image(read_detections_file(p)) for p in args.det_files]
    weights = [1.0] * len(per_file)
    if args.weights:
        weights = [float(w) for w in args.weights.split(",")]
        if len(weights) != len(per_file):
            raise CliError(f"{len(weights)} weights given for {len(per_file)} detection files")
    images = sorted(set().union(*per_file))
    fused = {}
    for img in images:
        if args.method == "wbf":
            preds = [ModelPrediction(str(i), f.get(img, []), w) for i, (f, w) in enumerate(zip(per_file, weights))]
            fused[img] = wbf(preds, cfg)
        else:
            pooled = [d for f in per_file for d in f.get(img, [])]
            fused[img] = nms(pooled, cfg) if args.method == "nms" else soft_nms(pooled, cfg)
    _emit(write_detections(flatten(fused)), args.out)


def cmd_tta_plan(args) -> None:
    size = ImageSize(args.width, args.height)
    factors = [float(f) for f in args.factors.split(",")]
    plan = tta_views(size, args.base_scale, factors)
    doc = {
        "source": {"width": size.width, "height": size.height},
        "views": [{"scale": v.scale, "hflip": v.hflip,
                   "view_width": v.view_width, "view_height": v.view_height} for v in plan.views],
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)


def cmd_tta_fuse(args) -> None:
    cfg = _fusion_config(args)
    sizes: Dict[str, ImageSize] = {}
    if args.sizes:
        sizes = {k: ImageSize(*v) for k, v in json.loads(Path(args.sizes).read_text()).items()}
    default = ImageSize(args.width, args.height) if args.width and args.height else None
    views = []
    for spec in args.views:
        try:
            path, scale, flip = spec.rsplit(":", 2)
            views.append((group_by_image(read_detections_file(path)), float(scale), flip in ("1", "true", "flip")))
        except ValueError:
            raise CliError(f"view spec must look like FILE:SCALE:FLIP, got {spec!r}") from None
    images = sorted(set().union(*(v[0] for v in views)))
    fused = {}
    for img in images:
        size = sizes.get(img, default)
        if size is None:
            raise CliError(f"no source size for image {img!r}; pass --sizes or --width/--height")
        per_view = [(ViewTransform(scale, flip, size), dets.get(img, [])) for dets, scale, flip in views]
        fused[img] = tta_fuse(per_view, cfg)
    _emit(write_detections(flatten(fused)), args.out)


def cmd_eval(args) -> None:
    thresholds = _parse_range(args.iou_range)
    report = evaluate(_eval_dets(args.dets), _gt_by_image(args.gts), thresholds, args.max_dets)
    names = [CATEGORY_NAMES[c] for c in EVAL_CLASSES]
    head = f"{'metric':<12}" + "".join(f"{n:>16}" for n in names) + f"{'all':>10}"
    rows = [head]

    def fmt(v):
        return f"{100 * v:.2f}" if v is not None and v == v else "-"

    ap = [report.map_of(c) if c in report.ap else None for c in EVAL_CLASSES]
    rows.append(f"{'AP':<12}" + "".join(f"{fmt(v):>16}" for v in ap) + f"{fmt(report.map):>10}")
    if any(abs(t - 0.5) < 1e-9 for t in thresholds):
        ap50 = [report.ap50_of(c) if c in report.ap else None for c in EVAL_CLASSES]
        rows.append(f"{'AP50':<12}" + "".join(f"{fmt(v):>16}" for v in ap50) + f"{fmt(report.ap50):>10}")
    sys.stdout.write("\n".join(rows) + "\n")
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(CATEGORY_NAMES), indent=2) + "\n")


def cmd_confusion(args) -> None:
    index = {c: i for i, c in enumerate(EVAL_CLASSES)}

    def remap(by_image, is_gt):
        out = {}
        for img, items in by_image.items():
            kept = []
            for it in items:
                if is_gt and it.ignore:
                    kept.append(GroundTruthBox(it.box, 0, ignore=True))
                elif it.class_id in index:
                    kept.append(replace(it, class_id=index[it.class_id]))
            out[img] = kept
        return out

    cm = confusion_matrix_dataset(
        remap(_eval_dets(args.dets), False), remap(_gt_by_image(args.gts), True),
        len(EVAL_CLASSES), args.iou, args.conf,
    )
    _emit(cm.to_csv([CATEGORY_NAMES[c] for c in EVAL_CLASSES]), args.out)


def cmd_train_classifier(args) -> None:
    images = Path(args.images)
    samples = []
    for img, records in sorted(read_annotation_dir(args.ann_dir).items()):
        s = _sample_from(_find_image(images, img), None)
        s.labels = [Label(r.category, r.box, ignore=not r.evaluated) for r in records
                    if r.bbox_width > 0 and r.bbox_height > 0]
        samples.append(s)
    patches = build_patch_dataset(samples)
    clf = train_tiny_classifier([p.pixels for p in patches], [p.class_id for p in patches],
                                args.epochs, args.lr, args.hidden, args.seed)
    clf.save(args.out)
    sys.stdout.write(json.dumps({"patches": len(patches), "train_accuracy": clf.train_accuracy}) + "\n")


def cmd_rescore(args) -> None:
    clf = PatchClassifier.load(args.clf_params)
    policy = RescorePolicy(args.replace_label, args.min_conf, args.combine)
    by_image = group_by_image(read_detections_file(args.dets))
    out = {}
    for img in sorted(by_image):
        image = read_image(_find_image(Path(args.images), img))
        if image.ndim == 2:
            image = np.repeat(image[:, :, None], 3, axis=2)
        out[img] = rescore_detections(by_image[img], image.astype(np.float64), clf, policy)
    _emit(write_detections(flatten(out)), args.out)


def cmd_class_weights(args) -> None:
    annotations = read_annotation_dir(args.ann_dir)
    counts = {c: 0 for c in EVAL_CLASSES}
    for records in annotations.values():
        for r in records:
            if r.category in counts:
                counts[r.category] += 1
    weights = class_weights([counts[c] for c in EVAL_CLASSES], args.exponent)
    doc = {CATEGORY_NAMES[c]: {"class_id": c, "labels": counts[c], "weight": w}
           for c, w in zip(EVAL_CLASSES, weights)}
    _emit(json.dumps(doc, indent=2) + "\n", args.out)


def cmd_blocks_check(args) -> int:
    from .nnblocks import CbamParams, EncoderParams, cbam_block, decode_block, default_heads, encoder_block
    from .nnblocks.gradcheck import grad_check

    rng = np.random.default_rng(args.seed)
    enc = EncoderParams.init(8, 2, rng)
    cbam = CbamParams.init(4, rng, reduction=2)
    head = default_heads(3)[0]
    results = {
        "transformer_encoder[4x8]": grad_check(encoder_block(enc), rng.normal(size=(4, 8)), args.eps),
        "cbam[4x5x5]": grad_check(cbam_block(cbam), rng.normal(size=(4, 5, 5)), args.eps),
        "head_decode[3x2x2x8]": grad_check(decode_block(head), rng.normal(size=(3, 2, 2, 8)), args.eps),
    }
    ok = True
    for name, err in results.items():
        passed = err < args.tolerance
        ok &= passed
        sys.stdout.write(f"{name:<28} max_rel_error={err:.3e} {'PASS' if passed else 'FAIL'}\n")
    return 0 if ok else 1


# -- parser -----------------------------------------------------------------------

def _add_fusion_args(p, method_args: bool = True) -> None:
    p.add_argument("--iou-thr", type=float, default=0.5)
    p.add_argument("--score-thr", type=float, default=0.001)
    p.add_argument("--class-agnostic", action="store_true")
    if method_args:
        p.add_argument("--sigma", type=float, default=0.5)
        p.add_argument("--softnms-mode", choices=("linear", "gaussian"), default="gaussian")
        p.add_argument("--conf-rescale", action="store_true", help="WBF min(T, N)/T confidence rescaling")
    p.add_argument("--out", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dronedet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="label statistics and tiny-label count")
    p.add_argument("ann_dir")
    p.add_argument("--min-px", type=float, default=3)
    p.add_argument("--ref-long-side", type=int, default=1536)
    p.add_argument("--images", help="directory of PPM/PGM images (sizes read from headers)")
    p.add_argument("--image-size", help="one WIDTHxHEIGHT for every image")
    p.add_argument("--json", help="also write the report as JSON here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("mask-tiny", help="gray out labels too small to learn from")
    p.add_argument("image")
    p.add_argument("annotations")
    p.add_argument("--out", required=True)
    p.add_argument("--min-px", type=float, default=3)
    p.add_argument("--ref-long-side", type=int, default=1536)
    p.set_defaults(func=cmd_mask_tiny)

    p = sub.add_parser("augment", help="mosaic / mixup / affine / hsv augmentation")
    p.add_argument("config", help="JSON file: AugmentConfig fields plus an 'ops' list")
    p.add_argument("seed", type=int)
    p.add_argument("samples", nargs="+", help="PPM images; labels read from the sibling .txt")
    p.add_argument("--out", default="augmented")
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("fuse", help="fuse detection files with NMS, Soft-NMS or WBF")
    p.add_argument("det_files", nargs="+")
    p.add_argument("--method", choices=("nms", "soft-nms", "wbf"), required=True)
    p.add_argument("--weights", help="comma-separated per-file weights (WBF)")
    _add_fusion_args(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("tta-plan", help="the six ms-testing views as JSON")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--base-scale", type=float, default=1.3)
    p.add_argument("--factors", default="1.0,0.83,0.67")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tta_plan)

    p = sub.add_parser("tta-fuse", help="map per-view detections back and fuse with NMS")
    p.add_argument("views", nargs="+", help="FILE:SCALE:FLIP, FLIP in {0,1}")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--sizes", help="JSON mapping image id to [width, height]")
    _add_fusion_args(p, method_args=False)
    p.set_defaults(func=cmd_tta_fuse)

    p = sub.add_parser("eval", help="COCO-style AP per VisDrone class")
    p.add_argument("dets")
    p.add_argument("gts", help="directory of VisDrone annotation files")
    p.add_argument("--iou-range", default="0.5:0.05:0.95")
    p.add_argument("--max-dets", type=int, default=MAX_DETS)
    p.add_argument("--json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("confusion", help="confusion matrix as CSV")
    p.add_argument("dets")
    p.add_argument("gts")
    p.add_argument("--iou", type=float, default=0.45)
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--out")
    p.set_defaults(func=cmd_confusion)

    p = sub.add_parser("train-classifier", help="train the patch classifier on ground-truth crops")
    p.add_argument("ann_dir")
    p.add_argument("images")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("rescore", help="relabel detections with the patch classifier")
    p.add_argument("dets")
    p.add_argument("images")
    p.add_argument("clf_params")
    p.add_argument("--replace-label", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--min-conf", type=float, default=0.5)
    p.add_argument("--combine", choices=("keep", "multiply"), default="keep")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("class-weights", help="per-class weights from label counts")
    p.add_argument("ann_dir")
    p.add_argument("--exponent", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_class_weights)

    p = sub.add_parser("blocks-check", help="finite-difference check of encoder, CBAM and decode")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_blocks_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = args.func(args)
    except (CliError, ValueError, OSError, KeyError) as e:
        msg = str(e).replace("\n", " ")
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": msg}) + "\n")
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
