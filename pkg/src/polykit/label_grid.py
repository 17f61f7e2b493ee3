"""Ground-truth target tensors on a YOLO-style grid and label-rewrite auditing.

Grid coordinates are ``(column, row)`` with the origin at the top-left of the
input image. A label occupies the slot ``(row, column, anchor)`` of the cell
containing its box center and of its best co-centered-IoU anchor. When two
labels of one image map to the same slot, only the later one survives in the
target tensor; the earlier one is "rewritten".

Slot layout along the last tensor axis::

    [tx, ty, tw, th, q, class_0 .. class_{C-1}, (alpha, beta, gamma) * V]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .geometry import Box, GeometryError, Polygon, box_center, iou_matrix
from .polar_codec import PolarGridSpec, PolarPolygon, decode_polygon, encode_polygon

SATURATED_LOGIT = 40.0


@dataclass(frozen=True)
class GridSpec:
    input_w: int
    input_h: int
    scale: Fraction = Fraction(1, 4)

    def __post_init__(self):
        object.__setattr__(self, "scale", Fraction(self.scale))
        for side, name in ((self.input_w, "width"), (self.input_h, "height")):
            cells = side * self.scale
            if cells.denominator != 1 or cells <= 0:
                raise ValueError(f"input {name} {side} is not divisible at scale {self.scale}")

    @property
    def grid_w(self) -> int:
        return int(self.input_w * self.scale)

    @property
    def grid_h(self) -> int:
        return int(self.input_h * self.scale)

    @property
    def stride(self) -> float:
        return float(1 / self.scale)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        s = float(self.scale)
        return math.floor(x * s), math.floor(y * s)


@dataclass(frozen=True)
class AnchorSet:
    """Anchor sizes in input pixels, optionally tied to per-anchor output scales.

    ``scales`` emulates multi-head detectors such as YOLOv3, where each anchor
    triplet belongs to its own output stride. Without it every anchor lives on
    the grid passed alongside.
    """

    anchors: tuple[tuple[float, float], ...]
    scales: Optional[tuple[Fraction, ...]] = None

    def __post_init__(self):
        anchors = tuple((float(w), float(h)) for w, h in self.anchors)
        if not anchors:
            raise ValueError("anchor set is empty")
        if any(w <= 0 or h <= 0 for w, h in anchors):
            raise ValueError("anchor dimensions must be positive")
        object.__setattr__(self, "anchors", anchors)
        if self.scales is not None:
            scales = tuple(Fraction(s) for s in self.scales)
            if len(scales) != len(anchors):
                raise ValueError("scale partition must name a scale for every anchor")
            object.__setattr__(self, "scales", scales)

    def __len__(self):
        return len(self.anchors)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.anchors, dtype=float)

    @property
    def diagonals(self) -> np.ndarray:
        a = self.array
        return np.hypot(a[:, 0], a[:, 1])

    def scale_of(self, j: int, default: Fraction) -> Fraction:
        return default if self.scales is None else self.scales[j]

    @classmethod
    def partitioned(cls, anchors, scales: Sequence[Fraction]) -> "AnchorSet":
        """Split anchors by area into equal groups, smallest group on the finest scale."""
        ordered = sorted(((float(w), float(h)) for w, h in anchors), key=lambda a: a[0] * a[1])
        if len(ordered) % len(scales):
            raise ValueError(f"{len(ordered)} anchors cannot be split over {len(scales)} scales")
        per = len(ordered) // len(scales)
        fine_first = sorted((Fraction(s) for s in scales), reverse=True)
        owners = tuple(fine_first[i // per] for i in range(len(ordered)))
        return cls(tuple(ordered), owners)


@dataclass(frozen=True)
class SlotLayout:
    n_classes: int
    n_vertices: int = 0

    @property
    def depth(self) -> int:
        return 5 + self.n_classes + 3 * self.n_vertices

    @property
    def classes(self) -> slice:
        return slice(5, 5 + self.n_classes)

    @property
    def polar(self) -> slice:
        return slice(5 + self.n_classes, self.depth)

    @classmethod
    def from_depth(cls, depth: int, n_classes: int) -> "SlotLayout":
        rest = depth - 5 - n_classes
        if rest < 0 or rest % 3:
            raise ValueError(f"slot depth {depth} does not fit {n_classes} classes")
        return cls(n_classes, rest // 3)


@dataclass
class RewriteReport:
    total_labels: int = 0
    rewritten: int = 0
    events: list[tuple[int, int, tuple[int, int], int]] = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.rewritten / self.total_labels if self.total_labels else 0.0

    @property
    def collisions(self) -> int:
        """Distinct slots that received more than one label."""
        return len({(cell, a) for _, _, cell, a in self.events})

    def merge(self, other: "RewriteReport") -> "RewriteReport":
        return RewriteReport(
            self.total_labels + other.total_labels,
            self.rewritten + other.rewritten,
            self.events + other.events,
        )


def xi(x: float, y: float, z: float) -> int:
    """1 when ``x`` and ``y`` fall into the same cell at scale ``z``."""
    return int(math.floor(x * z) == math.floor(y * z))


def cocentered_iou(wh: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """IoU between size rows ``(N, 2)`` and anchors ``(K, 2)`` sharing one center."""
    wh = np.asarray(wh, dtype=float).reshape(-1, 2)
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 2)
    inter = np.minimum(wh[:, None, 0], anchors[None, :, 0]) * np.minimum(
        wh[:, None, 1], anchors[None, :, 1]
    )
    union = (wh[:, 0] * wh[:, 1])[:, None] + (anchors[:, 0] * anchors[:, 1])[None, :] - inter
    return inter / union


def match_anchor(b: Box, anchors: AnchorSet) -> int:
    if b.width <= 0 or b.height <= 0:
        raise GeometryError(f"cannot match a degenerate box {b}")
    ious = cocentered_iou([[b.width, b.height]], anchors.array)[0]
    return int(np.argmax(ious))


def count_rewrites(boxes: Sequence[Box], grid: GridSpec, anchors: AnchorSet) -> RewriteReport:
    """Pairwise rewrite audit of one image.

    Two labels collide when both center coordinates share a cell at their
    anchor's scale and both pick the same anchor. A label is lost when any
    later label collides with it; its event names the first such label.
    """
    n = len(boxes)
    report = RewriteReport(total_labels=n)
    if n == 0:
        return report
    xyxy = np.array([(b.x1, b.y1, b.x2, b.y2) for b in boxes], dtype=float)
    wh = xyxy[:, 2:] - xyxy[:, :2]
    if (wh <= 0).any():
        bad = int(np.flatnonzero((wh <= 0).any(axis=1))[0])
        raise GeometryError(f"cannot match a degenerate box {boxes[bad]}")
    # same co-centered IoU and lowest-index tie rule as match_anchor
    best = np.argmax(cocentered_iou(wh, anchors.array), axis=1)
    scales = np.array([float(anchors.scale_of(j, grid.scale)) for j in range(len(anchors))])
    scale = scales[best]
    centers = 0.5 * (xyxy[:, :2] + xyxy[:, 2:])
    # xi on both axes for every pair at once; same anchor implies same scale
    cells = np.floor(centers * scale[:, None])
    same = (
        (best[:, None] == best[None, :])
        & (cells[:, None, 0] == cells[None, :, 0])
        & (cells[:, None, 1] == cells[None, :, 1])
    )
    later = np.triu(same, k=1)
    for i in np.flatnonzero(later.any(axis=1)):
        j = int(np.argmax(later[i]))
        cell = (int(cells[i, 0]), int(cells[i, 1]))
        report.events.append((int(i), j, cell, int(best[i])))
        report.rewritten += 1
    return report


def build_targets(
    labels: Sequence[tuple[Box, Optional[Polygon]]],
    grid: GridSpec,
    anchors: AnchorSet,
    spec: Optional[PolarGridSpec],
    n_classes: int,
) -> tuple[np.ndarray, RewriteReport]:
    """Write labels into a dense ``(G_h, G_w, n_anchors, depth)`` target tensor.

    Labels are written in order; a label landing on an occupied slot replaces
    it and the replacement is recorded in the returned report.
    """
    if anchors.scales is not None and len(set(anchors.scales)) > 1:
        raise ValueError("build_targets writes a single scale; got a multi-scale anchor set")
    n_vertices = spec.n_vertices if spec is not None else 0
    layout = SlotLayout(n_classes, n_vertices)
    s = float(anchors.scale_of(0, grid.scale))
    gw, gh = grid.input_w * s, grid.input_h * s
    target = np.zeros((int(gh), int(gw), len(anchors), layout.depth))
    occupant: dict[tuple[int, int, int], int] = {}
    report = RewriteReport(total_labels=len(labels))
    for idx, (b, poly) in enumerate(labels):
        if b.class_id >= n_classes:
            raise ValueError(f"label {idx}: class {b.class_id} >= n_classes {n_classes}")
        cx, cy = box_center(b)
        col, row = math.floor(cx * s), math.floor(cy * s)
        if not (0 <= col < gw and 0 <= row < gh):
            raise IndexError(f"label {idx}: center ({cx}, {cy}) lies outside the grid")
        j = match_anchor(b, anchors)
        key = (row, col, j)
        if key in occupant:
            report.events.append((occupant[key], idx, (col, row), j))
            report.rewritten += 1
        occupant[key] = idx
        aw, ah = anchors.anchors[j]
        slot = np.zeros(layout.depth)
        slot[0] = cx * s - col
        slot[1] = cy * s - row
        slot[2] = math.log(b.width / aw)
        slot[3] = math.log(b.height / ah)
        slot[4] = 1.0
        slot[5 + b.class_id] = 1.0
        if poly is not None and spec is not None:
            slot[layout.polar] = encode_polygon(poly, b, spec).cells.ravel()
        target[row, col, j] = slot
    return target, report


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _logit(p, limit: float = SATURATED_LOGIT):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(p) - np.log1p(-p)
    return np.clip(out, -limit, limit)


def _check_shape(raw: np.ndarray, grid: GridSpec, anchors: AnchorSet, layout: SlotLayout):
    want = (grid.grid_h, grid.grid_w, len(anchors), layout.depth)
    if raw.shape != want:
        raise ValueError(f"prediction shape {raw.shape} != expected {want}")


def decode_boxes(raw: np.ndarray, grid: GridSpec, anchors: AnchorSet) -> np.ndarray:
    """Corner-form boxes ``(G_h, G_w, n_anchors, 4)`` decoded from raw predictions."""
    raw = np.asarray(raw, dtype=float)
    s = float(grid.scale)
    cols = np.arange(raw.shape[1])[None, :, None]
    rows = np.arange(raw.shape[0])[:, None, None]
    cx = (cols + _sigmoid(raw[..., 0])) / s
    cy = (rows + _sigmoid(raw[..., 1])) / s
    a = anchors.array
    w = a[None, None, :, 0] * np.exp(raw[..., 2])
    h = a[None, None, :, 1] * np.exp(raw[..., 3])
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def decode_predictions(
    raw: np.ndarray,
    grid: GridSpec,
    anchors: AnchorSet,
    spec: Optional[PolarGridSpec],
    n_classes: int,
    conf_threshold: float = 0.5,
    image_id=None,
):
    """Turn a raw prediction tensor into detections.

    Center offsets, objectness, classes, ``beta`` and ``gamma`` pass through a
    logistic; sizes and vertex distances are exponentiated against the anchor
    (its width/height, or its diagonal for vertices). Slots scoring at least
    ``conf_threshold`` (objectness times best class probability) are emitted
    with a polygon decoded at ``gamma >= 0.5``, or ``None`` when fewer than
    three sectors pass.
    """
    from .detect_eval import Detection

    raw = np.asarray(raw, dtype=float)
    layout = SlotLayout(n_classes, spec.n_vertices if spec is not None else 0)
    _check_shape(raw, grid, anchors, layout)
    boxes = decode_boxes(raw, grid, anchors)
    obj = _sigmoid(raw[..., 4])
    cls = _sigmoid(raw[..., layout.classes])
    cls_id = np.argmax(cls, axis=-1)
    score = obj * np.max(cls, axis=-1)
    a_diag = anchors.diagonals
    out = []
    for row, col, j in zip(*np.nonzero(score >= conf_threshold)):
        x1, y1, x2, y2 = boxes[row, col, j]
        box = Box(x1, y1, x2, y2, int(cls_id[row, col, j]), float(score[row, col, j]))
        polygon = None
        if spec is not None and spec.n_vertices:
            polar = raw[row, col, j, layout.polar].reshape(-1, 3)
            diag = math.hypot(box.width, box.height)
            cells = np.column_stack(
                [
                    a_diag[j] * np.exp(polar[:, 0]) / diag,
                    _sigmoid(polar[:, 1]),
                    _sigmoid(polar[:, 2]),
                ]
            )
            try:
                polygon = decode_polygon(PolarPolygon(spec, cells), box, 0.5)
            except GeometryError:
                polygon = None
        out.append(Detection(box, polygon, float(score[row, col, j]), box.class_id, image_id))
    return out


def inverse_encoding(
    target: np.ndarray,
    grid: GridSpec,
    anchors: AnchorSet,
    n_classes: int,
    empty_logit: float = -SATURATED_LOGIT,
) -> np.ndarray:
    """Raw prediction tensor that decodes exactly to ``target``.

    Binary entries become saturated logits of +/-40; continuous offsets go
    through the logit; vertex distances are re-expressed as the log of the
    absolute distance over the anchor diagonal. Slots with ``q = 0`` get
    ``empty_logit`` for objectness, classes and vertex confidences.
    """
    target = np.asarray(target, dtype=float)
    layout = SlotLayout.from_depth(target.shape[-1], n_classes)
    raw = np.zeros_like(target)
    q = target[..., 4] > 0
    raw[..., 0] = _logit(target[..., 0])
    raw[..., 1] = _logit(target[..., 1])
    raw[..., 2] = target[..., 2]
    raw[..., 3] = target[..., 3]
    raw[..., 4] = np.where(q, SATURATED_LOGIT, empty_logit)
    cls = target[..., layout.classes]
    raw[..., layout.classes] = np.where(cls > 0, SATURATED_LOGIT, empty_logit)
    if layout.n_vertices:
        polar = target[..., layout.polar].reshape(target.shape[:-1] + (layout.n_vertices, 3))
        out = np.zeros_like(polar)
        abs_alpha = vertex_distance_over_anchor(target, anchors, layout)
        gamma = polar[..., 2] > 0
        with np.errstate(divide="ignore"):
            out[..., 0] = np.where(gamma, np.log(np.where(gamma, abs_alpha, 1.0)), 0.0)
        out[..., 1] = np.where(gamma, _logit(polar[..., 1]), 0.0)
        out[..., 2] = np.where(gamma, SATURATED_LOGIT, empty_logit)
        raw[..., layout.polar] = out.reshape(target.shape[:-1] + (-1,))
    return raw


def vertex_distance_over_anchor(target: np.ndarray, anchors: AnchorSet, layout: SlotLayout):
    """Absolute vertex distance divided by the anchor diagonal, per sector.

    The target stores ``alpha`` relative to the box diagonal; the box size is
    recovered from ``tw, th`` and the slot's anchor.
    """
    a = anchors.array
    w = a[:, 0] * np.exp(target[..., 2])
    h = a[:, 1] * np.exp(target[..., 3])
    ratio = np.hypot(w, h) / anchors.diagonals
    polar = target[..., layout.polar].reshape(target.shape[:-1] + (layout.n_vertices, 3))
    return polar[..., 0] * ratio[..., None]


def compute_ignore_mask(
    slot_boxes: np.ndarray,
    q: np.ndarray,
    labels: Sequence[Box],
    iou_threshold: float = 0.5,
) -> np.ndarray:
    """Slots to exclude from the no-object confidence loss.

    A slot is ignored when it holds no label (``q == 0``) but its decoded box
    overlaps some label with IoU strictly above ``iou_threshold``.
    """
    slot_boxes = np.asarray(slot_boxes, dtype=float)
    q = np.asarray(q)
    shape = slot_boxes.shape[:-1]
    if q.shape != shape:
        raise ValueError(f"objectness shape {q.shape} != slot shape {shape}")
    if not labels:
        return np.zeros(shape, dtype=bool)
    gt = np.array([b.as_array() for b in labels])
    best = iou_matrix(slot_boxes.reshape(-1, 4), gt).max(axis=1).reshape(shape)
    return (q == 0) & (best > iou_threshold)
