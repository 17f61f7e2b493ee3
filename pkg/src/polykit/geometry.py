"""Axis-aligned boxes, simple polygons and their rasterization.

Boxes are stored in corner form ``(x1, y1, x2, y2)`` in pixel units with the
origin at the top-left of the image; center/size form is derived on demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np


class GeometryError(ValueError):
    """Invalid or degenerate geometric input."""


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float
    class_id: int = 0
    score: Optional[float] = None

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise GeometryError(f"non-finite box coordinates {coords}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise GeometryError(f"box corners out of order: {coords}")
        if self.class_id < 0:
            raise GeometryError(f"negative class id {self.class_id}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise GeometryError(f"score {self.score} outside [0, 1]")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=float)

    @classmethod
    def from_center(cls, cx, cy, w, h, class_id=0, score=None) -> "Box":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, class_id, score)


class Polygon:
    """Implicitly closed polygon given by its ordered vertices."""

    __slots__ = ("_v",)

    def __init__(self, vertices: Iterable[Sequence[float]]):
        v = np.asarray([tuple(p) for p in vertices], dtype=float).reshape(-1, 2)
        if len(v) < 3:
            raise GeometryError(f"polygon needs at least 3 vertices, got {len(v)}")
        if not np.isfinite(v).all():
            raise GeometryError("non-finite polygon vertex")
        if (v == np.roll(v, -1, axis=0)).all(axis=1).any():
            raise GeometryError("polygon has two identical consecutive vertices")
        v.setflags(write=False)
        self._v = v

    @property
    def vertices(self) -> np.ndarray:
        """(N, 2) read-only array of ``(x, y)`` rows."""
        return self._v

    def points(self) -> list[Point]:
        return [Point(float(x), float(y)) for x, y in self._v]

    def __len__(self):
        return len(self._v)

    def __eq__(self, other):
        return isinstance(other, Polygon) and np.array_equal(self._v, other._v)

    def __hash__(self):
        return hash(self._v.tobytes())

    def __repr__(self):
        return f"Polygon({self._v.tolist()!r})"

    def bounds(self) -> Box:
        lo = self._v.min(axis=0)
        hi = self._v.max(axis=0)
        return Box(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def box_center(b: Box) -> Point:
    return Point(0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2))


def box_diagonal(b: Box) -> float:
    return math.hypot(b.width, b.height)


def iou_box(a: Box, b: Box) -> float:
    """Intersection over union of two boxes.

    Raises GeometryError when both boxes have zero area, since the ratio is
    undefined there and usually points at a broken annotation.
    """
    union_base = a.area + b.area
    if a.area <= 0 and b.area <= 0:
        raise GeometryError("IoU undefined for two zero-area boxes")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (union_base - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of corner-form box arrays ``(N, 4)`` and ``(M, 4)``.

    Pairs of two zero-area boxes get IoU 0 here; this is the bulk path used by
    NMS and evaluation, where such pairs simply never match.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def polygon_area(p: Polygon | Sequence[Sequence[float]]) -> float:
    v = p.vertices if isinstance(p, Polygon) else np.asarray(p, dtype=float)
    if len(v) < 3:
        raise GeometryError("polygon needs at least 3 vertices")
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polygon_signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def rasterize_polygon(p: Polygon, width: int, height: int) -> np.ndarray:
    """Boolean ``(height, width)`` mask of pixels whose center is inside ``p``.

    Even-odd rule on pixel centers ``(col + 0.5, row + 0.5)``. A center lying
    exactly on an edge counts as inside for left and top edges and outside for
    right and bottom edges, so adjacent polygons sharing an edge never both
    claim a pixel.
    """
    if width <= 0 or height <= 0:
        raise GeometryError(f"raster size must be positive, got {width}x{height}")
    v = p.vertices
    mask = np.zeros((height, width), dtype=bool)
    lo = np.floor(v.min(axis=0) - 0.5).astype(int)
    hi = np.ceil(v.max(axis=0) + 0.5).astype(int)
    c0, c1 = max(lo[0], 0), min(hi[0], width)
    r0, r1 = max(lo[1], 0), min(hi[1], height)
    if c0 >= c1 or r0 >= r1:
        return mask
    px = np.arange(c0, c1) + 0.5
    py = (np.arange(r0, r1) + 0.5)[:, None]
    inside = np.zeros((r1 - r0, c1 - c0), dtype=bool)
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for xa, ya, xb, yb in zip(x0, y0, x1, y1):
        if ya == yb:
            continue
        crosses = (ya > py) != (yb > py)
        x_at = xa + (py - ya) * (xb - xa) / (yb - ya)
        inside ^= crosses & (px < x_at)
    mask[r0:r1, c0:c1] = inside
    return mask


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        raise GeometryError("IoU undefined for two empty masks")
    return np.count_nonzero(a & b) / union
