"""Bounding-polygon labels from instance pixel blobs, and angle-interval splits.

Extraction keeps, for each angular bin around the blob's box center, the
boundary pixel farthest from that center. Folded or hollow objects therefore
get a polygon around their outer extent only. Strongly non-convex objects whose
inner and outer parts share a bin get bridged as well: the polygon then
covers area outside the blob. This is a known property of the labelling scheme
and is kept as-is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .geometry import Box, GeometryError, Polygon

DEFAULT_SECTORS = 72
# Farthest pixel centers sit slightly inside the object's true edge; moving
# each kept vertex outward by a fraction of a pixel compensates for that.
EDGE_OFFSET = 0.2


@dataclass(frozen=True)
class PixelBlob:
    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        if len(px) == 0:
            raise GeometryError("pixel blob is empty")
        if (px < 0).any() or (px[:, 0] >= self.width).any() or (px[:, 1] >= self.height).any():
            raise GeometryError("blob pixel outside the image")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "PixelBlob":
        ys, xs = np.nonzero(mask)
        return cls(mask.shape[1], mask.shape[0], np.column_stack([xs, ys]))

    def to_mask(self) -> np.ndarray:
        m = np.zeros((self.height, self.width), dtype=bool)
        m[self.pixels[:, 1], self.pixels[:, 0]] = True
        return m

    def bounds(self) -> Box:
        lo = self.pixels.min(axis=0)
        hi = self.pixels.max(axis=0) + 1
        return Box(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


@dataclass(frozen=True)
class AngleInterval:
    """Angular range ``[low, high]`` in degrees, walked counter-clockwise from ``low``.

    ``high`` may be smaller than ``low`` (wrapping through 0); ``high - low ==
    360`` covers the full circle.
    """

    low: float
    high: float
    class_id: Optional[int] = None

    def __post_init__(self):
        if self.low == self.high:
            raise ValueError("angle interval is empty")
        if not (0.0 <= self.low < 360.0 and 0.0 <= self.high <= 360.0):
            raise ValueError(f"interval bounds out of range: [{self.low}, {self.high}]")

    @property
    def span(self) -> float:
        s = self.high - self.low
        return s if s > 0 else s + 360.0


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """``(N, 2)`` ``(x, y)`` of mask pixels with at least one 4-neighbour outside the mask."""
    pad = np.pad(mask.astype(bool), 1)
    interior = pad[1:-1, :-2] & pad[1:-1, 2:] & pad[:-2, 1:-1] & pad[2:, 1:-1]
    ys, xs = np.nonzero(mask & ~interior)
    return np.column_stack([xs, ys])


def _perp_distance(p, a, b) -> float:
    ab = b - a
    n = math.hypot(ab[0], ab[1])
    if n == 0:
        return math.hypot(*(p - a))
    return abs(ab[0] * (p[1] - a[1]) - ab[1] * (p[0] - a[0])) / n


def _simplify(v: np.ndarray, eps: float) -> np.ndarray:
    pts = [np.asarray(p, dtype=float) for p in v]
    while len(pts) > 2:
        d = [_perp_distance(pts[i], pts[i - 1], pts[(i + 1) % len(pts)]) for i in range(len(pts))]
        i = int(np.argmin(d))
        if d[i] > eps:
            break
        pts.pop(i)
    return np.array(pts).reshape(-1, 2)


def simplify_collinear(p: Polygon, eps: float = 0.5) -> Polygon:
    """Drop vertices lying within ``eps`` px of the chord joining their neighbours.

    The vertex closest to its chord goes first and distances are recomputed
    after each removal, until every remaining vertex is farther than ``eps``.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    v = _simplify(p.vertices, eps)
    if len(v) < 3:
        raise GeometryError("polygon collapses to fewer than 3 vertices")
    return Polygon(v)


def sector_extremes(blob: PixelBlob, n_sectors: int) -> tuple[np.ndarray, np.ndarray]:
    """Farthest boundary pixel center per non-empty angular bin, in bin order.

    Returns the ``(x, y)`` pixel centers and the integer pixel coordinates they
    come from.
    """
    if n_sectors < 3:
        raise ValueError("need at least 3 sectors")
    box = blob.bounds()
    cx, cy = 0.5 * (box.x1 + box.x2), 0.5 * (box.y1 + box.y2)
    mask = blob.to_mask()
    edge = boundary_pixels(mask)
    centers = edge + 0.5
    dx, dy = centers[:, 0] - cx, centers[:, 1] - cy
    r2 = dx * dx + dy * dy
    theta = np.degrees(np.arctan2(dy, dx)) % 360.0
    sector = np.minimum((theta // (360.0 / n_sectors)).astype(int), n_sectors - 1)
    # farthest first, then lowest angle, so the per-sector pick is deterministic
    order = np.lexsort((theta, -r2, sector))
    first = np.ones(len(order), dtype=bool)
    first[1:] = sector[order][1:] != sector[order][:-1]
    keep = order[first]
    keep = keep[r2[keep] > 0]
    return centers[keep], edge[keep]


def extract_polygon(
    blob: PixelBlob,
    n_sectors: int = DEFAULT_SECTORS,
    eps: float = 0.0,
    edge_offset: float = EDGE_OFFSET,
) -> tuple[Polygon, Box]:
    """Single bounding polygon and tight box for one instance blob.

    The box spans whole pixels. Points that lie on a straight line between
    their neighbours (within ``eps``) are erased before the kept pixel centers
    are pushed ``edge_offset`` px outward along their ray from the center.
    """
    box = blob.bounds()
    cx, cy = 0.5 * (box.x1 + box.x2), 0.5 * (box.y1 + box.y2)
    pts, _ = sector_extremes(blob, n_sectors)
    pts = _simplify(pts, eps) if len(pts) >= 3 else pts
    if len(pts) < 3:
        raise GeometryError(f"blob yields only {len(pts)} polygon points")
    d = pts - (cx, cy)
    r = np.hypot(d[:, 0], d[:, 1])[:, None]
    return Polygon(pts + edge_offset * d / r), box


def _ray_hit(center: np.ndarray, theta: float, v: np.ndarray) -> np.ndarray:
    """Farthest intersection of the ray from ``center`` at ``theta`` degrees with the polygon."""
    d = np.array([math.cos(math.radians(theta)), math.sin(math.radians(theta))])
    best_t = None
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        e = b - a
        den = d[0] * (-e[1]) - d[1] * (-e[0])
        if den == 0:
            continue
        w = a - center
        t = (w[0] * (-e[1]) - w[1] * (-e[0])) / den
        u = (d[0] * w[1] - d[1] * w[0]) / den
        if t >= 0 and -1e-12 <= u <= 1 + 1e-12 and (best_t is None or t > best_t):
            best_t = t
    if best_t is None:
        raise GeometryError("ray from the center misses the polygon")
    return center + best_t * d


@dataclass
class IntervalSplit:
    emphasized: Optional[Polygon]
    dimmed: Optional[Polygon]
    star_shaped: bool = True


def is_star_shaped_about(v: np.ndarray, center) -> bool:
    """True when the vertex angles around ``center`` wind once, monotonically."""
    d = np.asarray(v, dtype=float) - center
    if (np.hypot(d[:, 0], d[:, 1]) == 0).any():
        return False
    a = np.arctan2(d[:, 1], d[:, 0])
    steps = (np.roll(a, -1) - a + np.pi) % (2 * np.pi) - np.pi
    monotone = bool(np.all(steps > 0) or np.all(steps < 0))
    return monotone and abs(abs(steps.sum()) - 2 * np.pi) < 1e-9


def _wedge(center, v, ang, low, span) -> Optional[Polygon]:
    rel = (ang - low) % 360.0
    inside = np.flatnonzero((rel > 0) & (rel < span))
    inside = inside[np.argsort(rel[inside], kind="stable")]
    pts = [center, _ray_hit(center, low, v)]
    pts += [v[i] for i in inside]
    pts.append(_ray_hit(center, low + span, v))
    cleaned = [pts[0]]
    for p in pts[1:]:
        if not np.array_equal(p, cleaned[-1]):
            cleaned.append(p)
    if np.array_equal(cleaned[0], cleaned[-1]):
        cleaned.pop()
    try:
        return Polygon(cleaned)
    except GeometryError:
        return None


def split_by_angle_interval(p: Polygon, b: Box, interval: AngleInterval) -> IntervalSplit:
    """Split ``p`` around the center of ``b`` into the part inside ``interval`` and the rest.

    The in-interval region is the one to dim; the complement is the one to
    emphasise. Boundary points where the interval's two rays cross the polygon
    are inserted into both parts. Polygons that are not star-shaped about the
    center are still split, with ``star_shaped=False`` flagging the result as
    approximate.
    """
    center = np.array([0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2)])
    v = p.vertices
    star = is_star_shaped_about(v, center)
    if interval.span >= 360.0:
        return IntervalSplit(None, p, star)
    d = v - center
    ang = np.degrees(np.arctan2(d[:, 1], d[:, 0])) % 360.0
    dimmed = _wedge(center, v, ang, interval.low, interval.span)
    emphasized = _wedge(center, v, ang, interval.low + interval.span, 360.0 - interval.span)
    return IntervalSplit(emphasized, dimmed, star)


def blobs_from_label_image(img: np.ndarray) -> Iterable[tuple[int, PixelBlob]]:
    """One blob per distinct non-zero gray level, in increasing level order."""
    for level in np.unique(img):
        if level == 0:
            continue
        yield int(level), PixelBlob.from_mask(img == level)
