"""Greedy NMS and COCO-style average precision for boxes and polygon masks.

AP follows the COCO recipe: per class and IoU threshold, detections of all
images are ranked by score, each is matched to the best still-unmatched
ground truth with IoU >= threshold, and precision is interpolated at 101
evenly spaced recall points. AP averages thresholds 0.50:0.05:0.95; AP50 and
AP75 use single thresholds. There is no area-range breakdown, no per-image
detection cap and no crowd handling.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Literal, Optional, Sequence

import numpy as np

from .geometry import Box, Polygon, iou_matrix, rasterize_polygon

COCO_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class Detection:
    box: Box
    polygon: Optional[Polygon]
    score: float
    class_id: int
    image_id: Hashable = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass
class GroundTruth:
    box: Box
    polygon: Optional[Polygon]
    class_id: int
    image_id: Hashable = None


@dataclass
class ClassAP:
    ap: float
    ap50: float
    ap75: float
    n_gt: int


@dataclass
class EvalResult:
    mode: str
    per_class: dict[int, ClassAP] = field(default_factory=dict)

    def _mean(self, attr) -> float:
        vals = [getattr(c, attr) for c in self.per_class.values()]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def ap(self) -> float:
        return self._mean("ap")

    @property
    def ap50(self) -> float:
        return self._mean("ap50")

    @property
    def ap75(self) -> float:
        return self._mean("ap75")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "per_class": {
                str(k): {"ap": v.ap, "ap50": v.ap50, "ap75": v.ap75, "n_gt": v.n_gt}
                for k, v in sorted(self.per_class.items())
            },
        }


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy per-(image, class) suppression; drops a detection when IoU > threshold."""
    groups = defaultdict(list)
    for i, d in enumerate(dets):
        groups[(d.image_id, d.class_id)].append(i)
    kept = []
    for idx in groups.values():
        idx = sorted(idx, key=lambda i: -dets[i].score)
        boxes = np.array([dets[i].box.as_array() for i in idx])
        ious = iou_matrix(boxes, boxes)
        alive = np.ones(len(idx), dtype=bool)
        for a in range(len(idx)):
            if not alive[a]:
                continue
            kept.append(idx[a])
            alive[a + 1 :] &= ious[a, a + 1 :] <= iou_threshold
    return [dets[i] for i in sorted(kept)]


def interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from a score-ranked TP/FP indicator sequence."""
    if n_gt == 0:
        raise ValueError("AP undefined without ground truth")
    tp = np.asarray(tp, dtype=float)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(q.mean())


def _mask_of(item, sizes, cache):
    key = id(item)
    if key not in cache:
        w, h = sizes[item.image_id]
        poly = item.polygon
        if poly is None:
            b = item.box
            poly = Polygon([(b.x1, b.y1), (b.x2, b.y1), (b.x2, b.y2), (b.x1, b.y2)])
        cache[key] = rasterize_polygon(poly, w, h).ravel()
    return cache[key]


def _iou_table(dets, gts, mode, sizes, cache) -> np.ndarray:
    if not dets or not gts:
        return np.zeros((len(dets), len(gts)))
    if mode == "box":
        return iou_matrix([d.box.as_array() for d in dets], [g.box.as_array() for g in gts])
    dm = np.array([_mask_of(d, sizes, cache) for d in dets], dtype=np.int64)
    gm = np.array([_mask_of(g, sizes, cache) for g in gts], dtype=np.int64)
    inter = dm @ gm.T
    union = dm.sum(1)[:, None] + gm.sum(1)[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def _match(ious: np.ndarray, threshold: float) -> np.ndarray:
    """TP flags for score-ordered detections of one image against its ground truth."""
    tp = np.zeros(ious.shape[0])
    taken = np.zeros(ious.shape[1], dtype=bool)
    for d in range(ious.shape[0]):
        best, best_iou = -1, threshold
        for g in range(ious.shape[1]):
            if taken[g] or ious[d, g] < best_iou:
                continue
            best, best_iou = g, ious[d, g]
        if best >= 0:
            taken[best] = True
            tp[d] = 1.0
    return tp


def evaluate(
    dets: Sequence[Detection],
    ground_truth: Sequence[GroundTruth],
    iou_thresholds: Sequence[float] = COCO_THRESHOLDS,
    mode: Literal["box", "mask"] = "box",
    image_sizes: Optional[dict] = None,
) -> EvalResult:
    """AP/AP50/AP75 per class; classes without ground truth are left out.

    ``mode="mask"`` rasterizes polygons (boxes when a polygon is missing) at
    the native size given in ``image_sizes[image_id] = (width, height)``.
    """
    if mode not in ("box", "mask"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if mode == "mask" and image_sizes is None:
        raise ValueError("mask evaluation needs image sizes")
    thresholds = sorted(set(float(t) for t in iou_thresholds) | {0.5, 0.75})
    by_class_gt = defaultdict(lambda: defaultdict(list))
    for g in ground_truth:
        by_class_gt[g.class_id][g.image_id].append(g)
    by_class_det = defaultdict(lambda: defaultdict(list))
    for d in dets:
        by_class_det[d.class_id][d.image_id].append(d)
    cache: dict = {}
    result = EvalResult(mode)
    for cls in sorted(by_class_gt):
        gts_by_img = by_class_gt[cls]
        n_gt = sum(len(v) for v in gts_by_img.values())
        images = sorted(set(gts_by_img) | set(by_class_det[cls]), key=repr)
        scores, flags = [], {t: [] for t in thresholds}
        for img in images:
            ds = sorted(by_class_det[cls].get(img, []), key=lambda d: -d.score)
            if not ds:
                continue
            ious = _iou_table(ds, gts_by_img.get(img, []), mode, image_sizes, cache)
            scores.extend(d.score for d in ds)
            for t in thresholds:
                flags[t].extend(_match(ious, t))
        order = np.argsort(-np.asarray(scores), kind="mergesort")
        ap_at = {t: interpolated_ap(np.asarray(flags[t])[order], n_gt) for t in thresholds}
        avg = [ap_at[float(t)] for t in iou_thresholds]
        result.per_class[cls] = ClassAP(float(np.mean(avg)), ap_at[0.5], ap_at[0.75], n_gt)
    return result
