import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polykit.geometry import (
    Box,
    GeometryError,
    Polygon,
    box_center,
    box_diagonal,
    iou_box,
    iou_matrix,
    mask_iou,
    polygon_area,
    rasterize_polygon,
)


def pixel_count_iou(a, b, sub=200):
    """IoU by counting sub-pixel samples on a fine lattice."""
    lo = min(a[0], b[0]), min(a[1], b[1])
    hi = max(a[2], b[2]), max(a[3], b[3])
    xs = lo[0] + (np.arange(int((hi[0] - lo[0]) * sub)) + 0.5) / sub
    ys = lo[1] + (np.arange(int((hi[1] - lo[1]) * sub)) + 0.5) / sub
    X, Y = np.meshgrid(xs, ys)
    ina = (X >= a[0]) & (X < a[2]) & (Y >= a[1]) & (Y < a[3])
    inb = (X >= b[0]) & (X < b[2]) & (Y >= b[1]) & (Y < b[3])
    return (ina & inb).sum() / (ina | inb).sum()


def test_box_center_examples():
    assert box_center(Box(0, 0, 10, 10)) == (5, 5)
    assert box_center(Box(2, 4, 2, 4)) == (2, 4)
    assert box_center(Box(0, 0, 3, 7)) == (1.5, 3.5)


def test_box_diagonal_examples():
    assert box_diagonal(Box(0, 0, 3, 4)) == 5
    assert box_diagonal(Box(0, 0, 0, 0)) == 0
    assert box_diagonal(Box(0, 0, 1, 1)) == pytest.approx(math.sqrt(2))


def test_box_rejects_bad_input():
    with pytest.raises(GeometryError):
        Box(1, 0, 0, 1)
    with pytest.raises(GeometryError):
        Box(0, 0, 1, 1, score=1.5)
    with pytest.raises(GeometryError):
        Box(0, 0, float("nan"), 1)


def test_iou_examples():
    a = Box(0, 0, 2, 2)
    assert iou_box(a, a) == 1.0
    assert iou_box(a, Box(5, 5, 6, 6)) == 0.0
    assert iou_box(a, Box(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)


def test_iou_one_seventh_matches_pixel_oracle():
    oracle = pixel_count_iou((0, 0, 2, 2), (1, 1, 3, 3))
    assert oracle == pytest.approx(1 / 7, abs=1e-9)
    assert iou_box(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) == pytest.approx(oracle, abs=1e-12)


def test_iou_pixel_oracle_random(rng):
    for _ in range(20):
        a = np.sort(rng.integers(0, 8, 4).reshape(2, 2), axis=0).T.ravel()[[0, 2, 1, 3]]
        b = np.sort(rng.integers(0, 8, 4).reshape(2, 2), axis=0).T.ravel()[[0, 2, 1, 3]]
        ba, bb = Box(*a), Box(*b)
        if ba.area == 0 or bb.area == 0:
            continue
        assert iou_box(ba, bb) == pytest.approx(pixel_count_iou(a, b, sub=20), abs=1e-12)


def test_iou_degenerate_pair_raises():
    with pytest.raises(GeometryError):
        iou_box(Box(1, 1, 1, 1), Box(0, 0, 0, 3))


def test_iou_degenerate_against_real_box_is_zero():
    assert iou_box(Box(1, 1, 1, 1), Box(0, 0, 2, 2)) == 0.0


coord = st.floats(-100, 100, allow_nan=False)


@st.composite
def boxes(draw):
    x1, x2 = sorted((draw(coord), draw(coord)))
    y1, y2 = sorted((draw(coord), draw(coord)))
    return Box(x1, y1, x2 + 0.01, y2 + 0.01)


@given(boxes(), boxes())
def test_iou_properties(a, b):
    v = iou_box(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou_box(b, a)
    assert iou_box(a, a) == pytest.approx(1.0)
    assert iou_matrix([a.as_array()], [b.as_array()])[0, 0] == pytest.approx(v, abs=1e-12)


def test_polygon_area_examples():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert polygon_area(Polygon(sq)) == 1.0
    assert polygon_area(Polygon(sq[::-1])) == 1.0
    assert polygon_area(Polygon([(0, 0), (4, 0), (0, 3)])) == 6.0
    with pytest.raises(GeometryError):
        Polygon([(0, 0), (1, 1)])


def test_polygon_rejects_repeated_vertex():
    with pytest.raises(GeometryError):
        Polygon([(0, 0), (0, 0), (1, 1), (2, 0)])


@settings(max_examples=50)
@given(st.integers(3, 12), st.integers(0, 11), st.integers(0, 2**31 - 1))
def test_polygon_area_order_invariance(n, shift, seed):
    r = np.random.default_rng(seed)
    ang = np.sort(r.uniform(0, 2 * math.pi, n))
    if np.any(np.diff(ang) < 1e-6):
        return
    v = np.column_stack([np.cos(ang), np.sin(ang)]) * r.uniform(1, 10, (n, 1))
    a = polygon_area(Polygon(v))
    assert polygon_area(Polygon(v[::-1])) == pytest.approx(a, rel=1e-12)
    assert polygon_area(Polygon(np.roll(v, shift % n, axis=0))) == pytest.approx(a, rel=1e-12)


def test_rasterize_exact_square():
    # square [2, 7] x [3, 8] covers pixel centers 2.5..6.5 and 3.5..7.5
    m = rasterize_polygon(Polygon([(2, 3), (7, 3), (7, 8), (2, 8)]), 12, 12)
    assert m.sum() == 25
    assert m[3:8, 2:7].all()


def test_rasterize_outside_is_empty():
    m = rasterize_polygon(Polygon([(50, 50), (60, 50), (60, 60)]), 10, 10)
    assert not m.any()


def test_rasterize_64gon_area():
    t = 2 * np.pi * np.arange(64) / 64
    p = Polygon(np.column_stack([20 + 10 * np.cos(t), 20 + 10 * np.sin(t)]))
    assert abs(rasterize_polygon(p, 40, 40).sum() - math.pi * 100) / (math.pi * 100) < 0.02


def test_rasterize_boundary_tie_rule():
    # left/top edges through pixel centers count as inside, right/bottom do not
    m = rasterize_polygon(Polygon([(0.5, 0.5), (2.5, 0.5), (2.5, 2.5), (0.5, 2.5)]), 4, 4)
    assert m.sum() == 4
    assert m[0, 0] and m[1, 1] and not m[2, 2]


def test_rasterize_rejects_bad_size():
    with pytest.raises(ValueError):
        rasterize_polygon(Polygon([(0, 0), (1, 0), (0, 1)]), 0, 5)


def test_rasterize_converges_to_area():
    shapes = [
        [(0, 0), (1, 0), (0.5, 0.9)],
        [(0, 0), (1, 0.2), (0.9, 1), (0.1, 0.8)],
    ]
    for v in shapes:
        p = Polygon(np.array(v) * 150 + 3)
        m = rasterize_polygon(p, 160, 160)
        assert m.sum() / polygon_area(p) == pytest.approx(1.0, abs=0.01)


def test_mask_iou():
    a = np.zeros((4, 4), bool)
    b = np.zeros((4, 4), bool)
    a[:2] = True
    b[1:3] = True
    assert mask_iou(a, b) == pytest.approx(4 / 12)
