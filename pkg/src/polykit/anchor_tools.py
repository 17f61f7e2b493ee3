"""Anchor estimation by IoU k-means and anchor/scale distribution diagnostics."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .label_grid import AnchorSet, GridSpec, RewriteReport, cocentered_iou, count_rewrites


class InfeasibleK(ValueError):
    pass


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    mean_iou: float
    iterations: int
    history: list[float] = field(default_factory=list)

    def anchor_set(self) -> AnchorSet:
        return AnchorSet(tuple(map(tuple, self.centroids)))


def as_sizes(samples) -> np.ndarray:
    m = np.asarray(samples, dtype=float).reshape(-1, 2)
    if m.size and (m <= 0).any():
        raise ValueError("box sizes must be positive")
    return m


def assign(samples: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best-IoU centroid per sample (lowest index on ties) and that IoU."""
    ious = cocentered_iou(samples, centroids)
    idx = np.argmax(ious, axis=1)
    return idx, ious[np.arange(len(samples)), idx]


def seed_centroids(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with ``1 - IoU`` as the distance."""
    first = int(rng.integers(len(samples)))
    chosen = [samples[first]]
    best = cocentered_iou(samples, samples[first : first + 1])[:, 0]
    for _ in range(1, k):
        d = 1.0 - best
        weights = d * d
        total = weights.sum()
        if total <= 0:
            raise InfeasibleK(f"k={k} exceeds the number of distinct sizes")
        pick = int(rng.choice(len(samples), p=weights / total))
        chosen.append(samples[pick])
        best = np.maximum(best, cocentered_iou(samples, samples[pick : pick + 1])[:, 0])
    return np.array(chosen)


def kmeans_iou(samples, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations on box sizes with ``1 - IoU`` distance and mean updates.

    A step whose mean update would lower the mean best IoU is not taken; the
    iteration stops on the previous centroids instead, so the recorded
    objective never decreases. An empty cluster is re-seeded with the sample
    that is currently worst covered (lowest best IoU, lowest index on ties).
    Centroids are returned sorted by area, smallest first.
    """
    m = as_sizes(samples)
    if len(m) == 0:
        raise ValueError("no samples to cluster")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    distinct = len(np.unique(m, axis=0))
    if k > distinct:
        raise InfeasibleK(f"k={k} exceeds the {distinct} distinct box sizes")
    rng = np.random.default_rng(seed)
    centroids = seed_centroids(m, k, rng)
    labels, best = assign(m, centroids)
    history = [float(best.mean())]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        updated = centroids.copy()
        for c in range(k):
            members = m[labels == c]
            if len(members):
                updated[c] = members.mean(axis=0)
        for c in range(k):
            if not np.any(labels == c):
                worst = int(np.argmin(best))
                updated[c] = m[worst]
                best[worst] = 1.0
        new_labels, new_best = assign(m, updated)
        score = float(new_best.mean())
        if score < history[-1]:
            break
        centroids = updated
        stable = np.array_equal(new_labels, labels)
        labels, best = new_labels, new_best
        history.append(score)
        if stable:
            break
    order = np.argsort(centroids[:, 0] * centroids[:, 1], kind="stable")
    centroids = centroids[order]
    labels, best = assign(m, centroids)
    return KMeansResult(centroids, labels, float(best.mean()), iterations, history)


def scale_histogram(samples, anchors: AnchorSet) -> Counter:
    """Number of samples whose best anchor lives on each output scale."""
    if anchors.scales is None:
        raise ValueError("anchor set has no per-scale partition")
    m = as_sizes(samples)
    hist: Counter = Counter({s: 0 for s in anchors.scales})
    if len(m) == 0:
        return hist
    idx, _ = assign(m, anchors.array)
    for j, n in zip(*np.unique(idx, return_counts=True)):
        hist[anchors.scales[j]] += int(n)
    return hist


@dataclass(frozen=True)
class AuditConfig:
    """One rewrite-audit setting: network input size and output scales.

    With several scales the anchors are split into equal groups by area
    (YOLOv3 style); a single scale receives every anchor.
    """

    name: str
    input_w: int
    input_h: int
    scales: tuple[Fraction, ...]

    @property
    def per_scale(self) -> bool:
        return len(self.scales) > 1


YOLOV3_SCALES = (Fraction(1, 8), Fraction(1, 16), Fraction(1, 32))
POLY_YOLO_SCALES = (Fraction(1, 4),)


def resize_boxes(boxes, src_w, src_h, dst_w, dst_h):
    """Stretch boxes from a native image size to the network input size."""
    from .geometry import Box

    sx, sy = dst_w / src_w, dst_h / src_h
    return [Box(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy, b.class_id) for b in boxes]


def audit_images(images, config: AuditConfig, anchors: AnchorSet) -> RewriteReport:
    """Aggregate rewrite report for ``images``: ``[(width, height, boxes)]``."""
    grid = GridSpec(config.input_w, config.input_h, min(config.scales))
    report = RewriteReport()
    for width, height, boxes in images:
        boxes = resize_boxes(boxes, width, height, config.input_w, config.input_h)
        boxes = [b for b in boxes if b.width > 0 and b.height > 0]
        report = report.merge(count_rewrites(boxes, grid, anchors))
    return report


def anchors_for(images, config: AuditConfig, k: int, seed: int) -> tuple[AnchorSet, KMeansResult]:
    sizes = [
        (b.width, b.height)
        for width, height, boxes in images
        for b in resize_boxes(boxes, width, height, config.input_w, config.input_h)
        if b.width > 0 and b.height > 0
    ]
    result = kmeans_iou(sizes, k, seed)
    if config.per_scale:
        anchors = AnchorSet.partitioned(result.centroids, config.scales)
    else:
        anchors = AnchorSet(tuple(map(tuple, result.centroids)), config.scales * k)
    return anchors, result


REPORT_COLUMNS = [
    "config",
    "input_w",
    "input_h",
    "scales",
    "k",
    "mean_iou",
    "labels",
    "rewritten",
    "collisions",
    "rewritten_pct",
    "scale_share",
]


def anchor_report(
    images, k: int, configs: Sequence[AuditConfig], seed: int = 0, anchors: AnchorSet | None = None
) -> tuple[str, list[dict]]:
    """CSV text plus row dicts combining k-means, scale histogram and rewrite audit.

    ``images`` is a sequence of ``(width, height, boxes)``. Anchors are fitted
    per configuration on the resized box sizes unless ``anchors`` is given.
    """
    n_boxes = sum(len(boxes) for _, _, boxes in images)
    if n_boxes == 0:
        raise ValueError("no boxes to build an anchor report from")
    rows = []
    for config in configs:
        if anchors is None:
            cfg_anchors, km = anchors_for(images, config, k, seed)
            mean_iou = km.mean_iou
        else:
            cfg_anchors = anchors
            if config.per_scale:
                cfg_anchors = AnchorSet.partitioned(anchors.anchors, config.scales)
            elif anchors.scales is None:
                cfg_anchors = AnchorSet(anchors.anchors, config.scales * len(anchors))
            mean_iou = float("nan")
        report = audit_images(images, config, cfg_anchors)
        sizes = [
            (b.width, b.height)
            for w, h, boxes in images
            for b in resize_boxes(boxes, w, h, config.input_w, config.input_h)
            if b.width > 0 and b.height > 0
        ]
        hist = scale_histogram(sizes, cfg_anchors)
        total = sum(hist.values()) or 1
        share = ";".join(f"{s}:{hist[s] / total:.4f}" for s in sorted(hist, reverse=True))
        rows.append(
            {
                "config": config.name,
                "input_w": config.input_w,
                "input_h": config.input_h,
                "scales": ";".join(str(s) for s in config.scales),
                "k": len(cfg_anchors),
                "mean_iou": round(mean_iou, 6),
                "labels": report.total_labels,
                "rewritten": report.rewritten,
                "collisions": report.collisions,
                "rewritten_pct": round(100.0 * report.ratio, 4),
                "scale_share": share,
            }
        )
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue(), rows
