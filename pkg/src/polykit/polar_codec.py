"""Per-sector polar encoding of polygon vertices relative to a bounding box.

Each box carries a polar sub-grid centred on the box center with
``n_vertices`` equal angular sectors. A sector holds at most one vertex as a
triplet ``(alpha, beta, gamma)``:

* ``alpha``: distance from the box center divided by the box diagonal,
* ``beta``: position of the vertex angle inside the sector, mapped to [0, 1),
* ``gamma``: 1 when the sector holds a vertex, 0 otherwise.

Angles are measured from the positive x axis towards the positive y axis (in
image coordinates, y grows downwards) and sectors are half-open, so a vertex
lying exactly on a sector boundary belongs to the higher-indexed sector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, GeometryError, Point, Polygon, box_center


@dataclass(frozen=True)
class PolarGridSpec:
    n_vertices: int

    def __post_init__(self):
        if self.n_vertices < 3:
            raise ValueError(f"need at least 3 sectors, got {self.n_vertices}")

    @property
    def span(self) -> float:
        """Angular width of one sector in degrees."""
        return 360.0 / self.n_vertices

    def sector_bounds(self, k: int) -> tuple[float, float]:
        return k * self.span, (k + 1) * self.span


@dataclass(frozen=True)
class PolarVertex:
    alpha: float
    beta: float
    gamma: float


@dataclass
class PolarPolygon:
    """Fixed-length polar representation, one ``(alpha, beta, gamma)`` row per sector.

    ``clamped`` counts vertices whose distance exceeded the box diagonal and
    ``discarded`` counts vertices dropped because a farther vertex shared
    their sector; both are dataset-QA counters filled in by ``encode_polygon``.
    """

    spec: PolarGridSpec
    cells: np.ndarray
    clamped: int = 0
    discarded: int = 0
    retained: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=float)
        if self.cells.shape != (self.spec.n_vertices, 3):
            raise ValueError(
                f"expected cells of shape ({self.spec.n_vertices}, 3), got {self.cells.shape}"
            )

    @property
    def alpha(self) -> np.ndarray:
        return self.cells[:, 0]

    @property
    def beta(self) -> np.ndarray:
        return self.cells[:, 1]

    @property
    def gamma(self) -> np.ndarray:
        return self.cells[:, 2]

    def __getitem__(self, k: int) -> PolarVertex:
        return PolarVertex(*map(float, self.cells[k]))

    def __len__(self):
        return self.spec.n_vertices


def _angle_deg(dx: float, dy: float) -> float:
    # Normalising by the larger component first makes the result depend only
    # on the direction, so exactly scaled inputs give bit-identical angles.
    m = max(abs(dx), abs(dy))
    theta = math.degrees(math.atan2(dy / m, dx / m))
    if theta < 0.0:
        theta += 360.0
    if theta >= 360.0:
        theta = 0.0
    return theta


def _sector_of(theta: float, spec: PolarGridSpec) -> int:
    return min(int(theta // spec.span), spec.n_vertices - 1)


def sector_index(origin: Point, v: Point, spec: PolarGridSpec) -> int:
    dx, dy = v[0] - origin[0], v[1] - origin[1]
    if dx == 0 and dy == 0:
        raise GeometryError("vertex coincides with the polar origin")
    return _sector_of(_angle_deg(dx, dy), spec)


def encode_polygon(p: Polygon, b: Box, spec: PolarGridSpec) -> PolarPolygon:
    """Encode polygon vertices into per-sector ``(alpha, beta, gamma)`` triplets.

    When several vertices fall into one sector the farthest from the box
    center wins. Vertices farther than the full box diagonal are clamped to
    ``alpha = 1`` and counted rather than rejected.
    """
    w, h = b.width, b.height
    diag_sq = w * w + h * h
    if diag_sq <= 0:
        raise GeometryError("cannot encode against a box with zero diagonal")
    cx, cy = box_center(b)
    cells = np.zeros((spec.n_vertices, 3))
    best = np.full(spec.n_vertices, -1.0)
    owner = [-1] * spec.n_vertices
    clamped = 0
    occupied = 0
    for idx, (x, y) in enumerate(p.vertices):
        dx, dy = x - cx, y - cy
        if dx == 0 and dy == 0:
            raise GeometryError(f"vertex {idx} coincides with the box center")
        theta = _angle_deg(dx, dy)
        k = _sector_of(theta, spec)
        occupied += 1
        r_sq = dx * dx + dy * dy
        if r_sq <= best[k]:
            continue
        best[k] = r_sq
        owner[k] = idx
        alpha = math.sqrt(r_sq / diag_sq)
        beta = min((theta - k * spec.span) / spec.span, 1.0)
        cells[k] = (alpha, max(beta, 0.0), 1.0)
    for k in range(spec.n_vertices):
        if cells[k, 2] and cells[k, 0] > 1.0:
            cells[k, 0] = 1.0
            clamped += 1
    retained = [i for i in owner if i >= 0]
    return PolarPolygon(
        spec, cells, clamped=clamped, discarded=occupied - len(retained), retained=sorted(retained)
    )


def decode_vertices(pp: PolarPolygon, b: Box, threshold: float = 0.5) -> np.ndarray:
    """Cartesian ``(N, 2)`` vertices of sectors with ``gamma >= threshold``, in sector order."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    cx, cy = box_center(b)
    diag = math.hypot(b.width, b.height)
    span = pp.spec.span
    out = []
    for k in np.flatnonzero(pp.gamma >= threshold):
        alpha, beta, _ = pp.cells[k]
        theta = math.radians((k + beta) * span)
        r = alpha * diag
        out.append((cx + r * math.cos(theta), cy + r * math.sin(theta)))
    return np.asarray(out, dtype=float).reshape(-1, 2)


def decode_polygon(pp: PolarPolygon, b: Box, threshold: float = 0.5) -> Polygon:
    """Decode to a cartesian polygon; no clipping to the box is applied."""
    v = decode_vertices(pp, b, threshold)
    if len(v) < 3:
        raise GeometryError(f"only {len(v)} sectors pass gamma >= {threshold}; need 3")
    return Polygon(v)
