"""polykit command line: batch audits, anchors, label extraction, synthesis, evaluation.

Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import anchor_tools, detect_eval, hypercolumn, loss_eval, mask_polygons, synth_gen
from .geometry import GeometryError
from .io import AnnotationRecord, DataError, object_record, read_jsonl, read_pnm, write_jsonl
from .label_grid import AnchorSet

log = logging.getLogger("polykit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvariantViolation(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def thread_count() -> int:
    raw = os.environ.get("POLYKIT_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"POLYKIT_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("POLYKIT_THREADS must be at least 1")
    return n


def parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return w, h


def parse_scales(text: str) -> tuple[Fraction, ...]:
    try:
        scales = tuple(Fraction(s.strip()) for s in text.split(","))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}") from None
    if not scales or any(s <= 0 or s > 1 for s in scales):
        raise argparse.ArgumentTypeError(f"scales must lie in (0, 1], got {text!r}")
    return scales


def load_images(path):
    """``[(width, height, boxes)]`` in image_id order."""
    records = sorted(read_jsonl(path), key=lambda r: r.image_id)
    return [(r.width, r.height, r.boxes()) for r in records]


def read_anchor_file(path) -> tuple[tuple[float, float], ...]:
    rows = []
    with open(path, newline="") as fh:
        for n, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].strip().startswith("#") or row[0].strip() == "w":
                continue
            try:
                w, h = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{n}: expected 'w,h'") from None
            if not (w > 0 and h > 0):
                raise DataError(f"{path}:{n}: anchor sizes must be positive")
            rows.append((w, h))
    if not rows:
        raise DataError(f"{path}: no anchors")
    return tuple(rows)


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# --- audit -----------------------------------------------------------------

AUDIT_HELP = "CSV columns: " + ", ".join(anchor_tools.REPORT_COLUMNS)


def cmd_audit(args) -> int:
    images = load_images(args.annotations)
    sizes = args.input_size or [(416, 416)]
    if args.scales is not None:
        scales = args.scales
    elif args.preset == "poly-yolo":
        scales = anchor_tools.POLY_YOLO_SCALES
    else:
        scales = anchor_tools.YOLOV3_SCALES
    if args.scales is not None and len(scales) > 1 and not args.per_scale:
        raise UsageError("several scales need --per-scale")
    configs = [
        anchor_tools.AuditConfig(f"{w}x{h}@{'+'.join(str(s) for s in scales)}", w, h, scales)
        for w, h in sizes
    ]
    anchors, k = None, 9
    if args.anchors is not None:
        if args.anchors.isdigit():
            k = int(args.anchors)
        else:
            anchors = AnchorSet(read_anchor_file(args.anchors))
            k = len(anchors)
    if sum(len(b) for _, _, b in images) == 0:
        rows = [
            {"config": c.name, "input_w": c.input_w, "input_h": c.input_h,
             "scales": ";".join(map(str, c.scales)), "k": k, "mean_iou": float("nan"),
             "labels": 0, "rewritten": 0, "collisions": 0, "rewritten_pct": 0.0,
             "scale_share": ""}
            for c in configs
        ]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=anchor_tools.REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    else:
        if anchors is not None and len(scales) > 1 and len(anchors) % len(scales):
            raise UsageError(f"{len(anchors)} anchors cannot be split over {len(scales)} scales")
        text, rows = anchor_tools.anchor_report(images, k, configs, args.seed, anchors)
    _write(args.csv, text)
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


# --- anchors ---------------------------------------------------------------


def cmd_anchors(args) -> int:
    images = load_images(args.annotations)
    sizes = [(b.width, b.height) for _, _, boxes in images for b in boxes if b.width > 0 and b.height > 0]
    if not sizes:
        raise DataError(f"{args.annotations}: no boxes with positive size")
    result = anchor_tools.kmeans_iou(sizes, args.k, args.seed, args.max_iter)
    lines = ["w,h"] + [f"{w:.6f},{h:.6f}" for w, h in result.centroids]
    _write(args.output, "\n".join(lines) + "\n")
    print(
        f"k={args.k} samples={len(sizes)} mean_iou={result.mean_iou:.6f} "
        f"iterations={result.iterations}",
        file=sys.stderr,
    )
    fixed, _ = anchor_tools.assign(np.asarray(sizes, dtype=float), result.centroids)
    if not np.array_equal(fixed, result.assignments):
        raise InvariantViolation("k-means result is not a fixed point of the assignment step")
    return EXIT_OK


# --- extract ---------------------------------------------------------------


def _extract_one(path, sectors, eps):
    img = read_pnm(path)
    if img.ndim != 2:
        raise DataError(f"{path}: masks must be single-channel PGM")
    objects = []
    for level, blob in mask_polygons.blobs_from_label_image(img):
        try:
            poly, box = mask_polygons.extract_polygon(blob, sectors, eps)
        except GeometryError as exc:
            log.warning("%s: level %d skipped: %s", path, level, exc)
            continue
        objects.append(object_record(box, poly))
    if not objects and not img.any():
        log.warning("%s: empty mask skipped", path)
    return AnnotationRecord(image_id=path.stem, width=img.shape[1], height=img.shape[0], objects=objects)


def cmd_extract(args) -> int:
    root = Path(args.masks)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    paths = sorted(root.glob("*.pgm"))
    with ThreadPoolExecutor(thread_count()) as pool:
        records = list(pool.map(lambda p: _extract_one(p, args.sectors, args.eps), paths))
    n = write_jsonl(args.output, [r for r in records if r.objects])
    print(f"{n} images with objects written to {args.output}", file=sys.stderr)
    return EXIT_OK


# --- synth -----------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        config = synth_gen.SynthConfig(
            width=args.size[0],
            height=args.size[1],
            objects_per_image=tuple(args.objects),
            primitives=tuple(args.primitives.split(",")),
            size_range=tuple(args.radius),
            background=args.background,
            star_spikes=args.spikes,
            seed=args.seed,
            count=args.count,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    n = synth_gen.write_dataset(config, args.out_dir, thread_count())
    print(f"{n} images written to {args.out_dir}", file=sys.stderr)
    return EXIT_OK


# --- eval ------------------------------------------------------------------


def cmd_eval(args) -> int:
    gt_records = list(read_jsonl(args.ground_truth))
    det_records = list(read_jsonl(args.detections))
    sizes = {r.image_id: (r.width, r.height) for r in gt_records}
    gts = [g for r in gt_records for g in r.ground_truth()]
    dets = [d for r in det_records for d in r.detections()]
    if args.nms is not None:
        dets = detect_eval.nms(dets, args.nms)
    result = detect_eval.evaluate(dets, gts, mode=args.mode, image_sizes=sizes)
    out = result.to_dict()
    for key in ("ap", "ap50", "ap75"):
        value = out[key]
        if not 0.0 <= value <= 1.0:
            raise InvariantViolation(f"{key}={value} outside [0, 1]")
    _write(args.json, json.dumps(out, indent=2) + "\n")
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_id", "ap", "ap50", "ap75", "n_gt"])
        for cls, v in out["per_class"].items():
            w.writerow([cls, v["ap"], v["ap50"], v["ap75"], v["n_gt"]])
        w.writerow(["mean", out["ap"], out["ap50"], out["ap75"], sum(v["n_gt"] for v in out["per_class"].values())])
        Path(args.csv).write_text(buf.getvalue())
    return EXIT_OK


# --- upsample-bench --------------------------------------------------------


def cmd_upsample_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    print("levels,interpolation,max_abs_diff,adds_direct,adds_stairstep,ms_direct,ms_stairstep")
    for n in range(2, args.max_levels + 1):
        base = 2 ** (n - 1) * args.base
        levels = [rng.normal(size=(base // 2**i, base // 2**i, args.channels)) for i in range(n)]
        for mode in ("nearest", "bilinear"):
            spec = hypercolumn.HypercolumnSpec(n, args.channels, mode)
            cd, cs = hypercolumn.AdditionCounter(), hypercolumn.AdditionCounter()
            t0 = time.perf_counter()
            a = hypercolumn.hypercolumn_direct(levels, spec, counter=cd)
            t1 = time.perf_counter()
            b = hypercolumn.hypercolumn_stairstep(levels, spec, counter=cs)
            t2 = time.perf_counter()
            diff = float(np.abs(a - b).max())
            if mode == "nearest" and diff != 0.0:
                raise InvariantViolation(f"nearest aggregation differs by {diff} at n={n}")
            print(f"{n},{mode},{diff:.6g},{cd.count},{cs.count},"
                  f"{1e3 * (t1 - t0):.3f},{1e3 * (t2 - t1):.3f}")
    return EXIT_OK


# --- loss-check ------------------------------------------------------------


def cmd_loss_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst_rel = worst_abs = 0.0
    for _ in range(args.instances):
        pred, target, grid, anchors, ignore = loss_eval.random_instance(rng)
        n_classes = 2

        def total(x):
            return loss_eval.loss_total(x, target, grid, anchors, n_classes, ignore).total

        analytic = loss_eval.loss_gradient(pred, target, grid, anchors, n_classes, ignore)
        numeric = loss_eval.finite_difference_gradient(total, pred, args.step)
        rel, tiny = loss_eval.gradient_errors(analytic, numeric)
        worst_rel, worst_abs = max(worst_rel, rel), max(worst_abs, tiny)
    ok = worst_rel < args.tolerance
    print(f"instances={args.instances} max rel err {worst_rel:.3e} "
          f"{'<' if ok else '>='} {args.tolerance:g} (max abs err on near-zero entries {worst_abs:.3e})")
    if not ok:
        raise InvariantViolation("analytic gradient disagrees with finite differences")
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polykit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("audit", help="label-rewrite audit", description="Count ground-truth "
                       "labels lost to slot collisions. " + AUDIT_HELP)
    a.add_argument("annotations", help="annotations.jsonl")
    a.add_argument("--preset", choices=("yolov3", "poly-yolo"),
                   help="yolov3: scales 1/8,1/16,1/32 with anchors split per scale; "
                        "poly-yolo: single scale 1/4 (default yolov3)")
    a.add_argument("--input-size", type=parse_size, action="append",
                   help="network input WxH; repeatable (default 416x416)")
    a.add_argument("--scales", type=parse_scales, help="comma list of output scales, e.g. 1/8,1/16,1/32")
    a.add_argument("--anchors", help="anchor CSV file (w,h rows) or k for k-means (default 9)")
    a.add_argument("--per-scale", action="store_true", help="split anchors by area over the scales")
    a.add_argument("--seed", type=int, default=0, help="k-means seed (default 0)")
    a.add_argument("--csv", help="CSV report path (default stdout)")
    a.add_argument("--json", help="JSON report path")
    a.set_defaults(func=cmd_audit)

    k = sub.add_parser("anchors", help="IoU k-means anchors",
                       description="Cluster box sizes; writes 'w,h' rows sorted by area.")
    k.add_argument("annotations", help="annotations.jsonl")
    k.add_argument("-k", type=int, default=9, help="number of anchors (default 9)")
    k.add_argument("--seed", type=int, default=0, help="seeding RNG (default 0)")
    k.add_argument("--max-iter", type=int, default=300, help="iteration cap (default 300)")
    k.add_argument("-o", "--output", help="anchor CSV path (default stdout)")
    k.set_defaults(func=cmd_anchors)

    e = sub.add_parser("extract", help="polygons from instance masks",
                       description="Each gray level > 0 of every *.pgm is one instance.")
    e.add_argument("masks", help="directory of PGM label images")
    e.add_argument("--sectors", type=int, default=mask_polygons.DEFAULT_SECTORS,
                   help=f"angular bins per object (default {mask_polygons.DEFAULT_SECTORS})")
    e.add_argument("--eps", type=float, default=0.0,
                   help="collinearity tolerance in px (default 0: exact collinearity only)")
    e.add_argument("-o", "--output", default="annotations.jsonl", help="default annotations.jsonl")
    e.set_defaults(func=cmd_extract)

    s = sub.add_parser("synth", help="synthetic primitive scenes",
                       description="Writes images/NNNNNN.ppm and annotations.jsonl.")
    s.add_argument("out_dir")
    s.add_argument("--count", type=int, default=10, help="number of images (default 10)")
    s.add_argument("--size", type=parse_size, default=(256, 256), help="image WxH (default 256x256)")
    s.add_argument("--objects", type=int, nargs=2, default=(1, 5), metavar=("MIN", "MAX"),
                   help="objects per image (default 1 5)")
    s.add_argument("--radius", type=float, nargs=2, default=(10.0, 40.0), metavar=("MIN", "MAX"),
                   help="object radius in px (default 10 40)")
    s.add_argument("--primitives", default=",".join(synth_gen.PRIMITIVES),
                   help="comma list; class id is the position in this list")
    s.add_argument("--background", choices=("flat", "noise"), default="flat")
    s.add_argument("--spikes", type=int, default=5, help="star spikes (>= 5)")
    s.add_argument("--seed", type=int, default=0, help="scene i depends only on (seed, i)")
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("eval", help="COCO-style AP",
                       description="CSV columns: class_id, ap, ap50, ap75, n_gt (last row: mean).")
    v.add_argument("ground_truth")
    v.add_argument("detections", help="JSONL with per-object scores")
    v.add_argument("--mode", choices=("box", "mask"), default="box",
                   help="box IoU or rasterized polygon IoU (default box)")
    v.add_argument("--nms", type=float, help="apply greedy NMS at this IoU first")
    v.add_argument("--json", help="JSON result path (default stdout)")
    v.add_argument("--csv", help="CSV result path")
    v.set_defaults(func=cmd_eval)

    u = sub.add_parser("upsample-bench", help="direct vs stairstep aggregation",
                       description="CSV columns: levels, interpolation, max_abs_diff, adds_direct, "
                                   "adds_stairstep, ms_direct, ms_stairstep.")
    u.add_argument("--max-levels", type=int, default=4, help="benchmark 1..N levels (default 4)")
    u.add_argument("--base", type=int, default=4, help="coarsest level side length")
    u.add_argument("--channels", type=int, default=8, help="aligned channels per level (default 8)")
    u.add_argument("--seed", type=int, default=0)
    u.set_defaults(func=cmd_upsample_bench)

    c = sub.add_parser("loss-check", help="finite-difference gradient check",
                       description="Compare the analytic loss gradient with central differences "
                                   "on random small instances; exit 3 when the tolerance is missed.")
    c.add_argument("--instances", type=int, default=50, help="default 50")
    c.add_argument("--step", type=float, default=1e-5, help="difference step (default 1e-5)")
    c.add_argument("--tolerance", type=float, default=1e-4, help="max relative error (default 1e-4)")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_loss_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="polykit: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"polykit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"polykit: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (DataError, anchor_tools.InfeasibleK, GeometryError, OSError, ValueError) as exc:
        print(f"polykit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
