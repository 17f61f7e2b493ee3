import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polykit.hypercolumn import (
    AdditionCounter,
    HypercolumnSpec,
    channel_align,
    count_added_elements,
    hypercolumn_direct,
    hypercolumn_stairstep,
    upsample,
)


def bilinear_oracle(f, factor):
    """Per-output-pixel evaluation of half-pixel bilinear sampling with edge clamping."""
    h, w, c = f.shape
    out = np.zeros((h * factor, w * factor, c))
    for i in range(h * factor):
        for j in range(w * factor):
            y = min(max((i + 0.5) / factor - 0.5, 0.0), h - 1)
            x = min(max((j + 0.5) / factor - 0.5, 0.0), w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = ((1 - fy) * (1 - fx) * f[y0, x0] + (1 - fy) * fx * f[y0, x1]
                         + fy * (1 - fx) * f[y1, x0] + fy * fx * f[y1, x1])
    return out


def pyramid(rng, n, base, delta):
    return [rng.normal(size=(base // 2**i, base // 2**i, delta)) for i in range(n)]


def test_channel_align_examples(rng):
    f = rng.normal(size=(3, 3, 4))
    np.testing.assert_array_equal(channel_align(f, np.eye(4)), f)
    assert not channel_align(f, np.zeros((4, 2))).any()
    w = rng.normal(size=(4, 2))
    oracle = np.zeros((3, 3, 2))
    for i in range(3):
        for j in range(3):
            for d in range(2):
                oracle[i, j, d] = sum(f[i, j, c] * w[c, d] for c in range(4))
    np.testing.assert_allclose(channel_align(f, w), oracle, rtol=1e-12)
    with pytest.raises(ValueError):
        channel_align(f, np.zeros((3, 2)))


def test_upsample_identity_and_constant(rng):
    f = rng.normal(size=(3, 5, 2))
    for mode in ("nearest", "bilinear"):
        np.testing.assert_array_equal(upsample(f, 1, mode), f)
        const = np.full((3, 4, 2), 2.5)
        for factor in (2, 3, 8):
            np.testing.assert_allclose(upsample(const, factor, mode), 2.5, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        upsample(f, 0)
    with pytest.raises(ValueError):
        upsample(f, 1.5)


def test_upsample_nearest_replicates(rng):
    f = rng.normal(size=(2, 3, 1))
    u = upsample(f, 3)
    assert u.shape == (6, 9, 1)
    assert (u[3:6, 6:9] == f[1, 2]).all()


def test_bilinear_hand_fixture():
    f = np.array([[1.0, 0.0], [0.0, 0.0]])[:, :, None]
    # source coords per axis: -0.25, 0.25, 0.75, 1.25 -> clamped 0, 0.25, 0.75, 1
    weights = np.array([1.0, 0.75, 0.25, 0.0])
    expected = np.outer(weights, weights)[:, :, None]
    np.testing.assert_allclose(upsample(f, 2, "bilinear"), expected, rtol=1e-15)
    np.testing.assert_allclose(bilinear_oracle(f, 2), expected, rtol=1e-15)


def test_bilinear_matches_oracle(rng):
    for factor in (2, 3, 4):
        f = rng.normal(size=(3, 4, 2))
        np.testing.assert_allclose(upsample(f, factor, "bilinear"), bilinear_oracle(f, factor), atol=1e-12)


def test_constants_both_schemes():
    levels = [np.ones((8, 8, 3)), np.full((4, 4, 3), 2.0)]
    for mode in ("nearest", "bilinear"):
        spec = HypercolumnSpec(2, 3, mode)
        assert (hypercolumn_direct(levels, spec) == 3).all()
        assert (hypercolumn_stairstep(levels, spec) == 3).all()


def test_single_level_applies_alignment(rng):
    f = rng.normal(size=(4, 4, 3))
    w = rng.normal(size=(3, 2))
    spec = HypercolumnSpec(1, 2)
    np.testing.assert_array_equal(hypercolumn_direct([f], spec, [w]), channel_align(f, w))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 4), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_nearest_bit_exact(n, delta, seed):
    r = np.random.default_rng(seed)
    base = 2 ** (n - 1) * int(r.integers(1, 32 // 2 ** (n - 1) + 1))
    levels = pyramid(r, n, base, delta)
    spec = HypercolumnSpec(n, delta, "nearest")
    assert np.array_equal(hypercolumn_direct(levels, spec), hypercolumn_stairstep(levels, spec))


def test_bilinear_differs_on_crafted_fixture():
    levels = [np.zeros((8, 8, 1)), np.zeros((4, 4, 1)), np.array([[1.0, 0], [0, 0]])[:, :, None]]
    spec = HypercolumnSpec(3, 1, "bilinear")
    d = hypercolumn_direct(levels, spec)
    s = hypercolumn_stairstep(levels, spec)
    assert np.abs(d - s)[1:-1, 1:-1].max() > 0
    # both still agree with the sampling oracle for their own path
    np.testing.assert_allclose(d, bilinear_oracle(levels[2], 4), atol=1e-12)
    np.testing.assert_allclose(s, bilinear_oracle(bilinear_oracle(levels[2], 2), 2), atol=1e-12)


def test_size_chain_violation(rng):
    spec = HypercolumnSpec(2, 2)
    with pytest.raises(ValueError):
        hypercolumn_direct([np.zeros((8, 8, 2)), np.zeros((3, 4, 2))], spec)
    with pytest.raises(ValueError):
        hypercolumn_stairstep([np.zeros((8, 8, 2)), np.zeros((4, 4, 3))], spec)
    with pytest.raises(ValueError):
        hypercolumn_direct([np.zeros((8, 8, 2))], spec)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.sampled_from(["nearest", "bilinear"]), st.integers(0, 2**31 - 1))
def test_linearity(n, mode, seed):
    r = np.random.default_rng(seed)
    base = 2 ** (n - 1) * 2
    x, y = pyramid(r, n, base, 3), pyramid(r, n, base, 3)
    w = [r.normal(size=(3, 2)) for _ in range(n)]
    a, b = r.normal(size=2)
    spec = HypercolumnSpec(n, 2, mode)
    mix = [a * xi + b * yi for xi, yi in zip(x, y)]
    for fn in (hypercolumn_direct, hypercolumn_stairstep):
        np.testing.assert_allclose(
            fn(mix, spec, w), a * fn(x, spec, w) + b * fn(y, spec, w), atol=1e-10
        )


def test_addition_counts_small_n():
    assert count_added_elements(HypercolumnSpec(1, 4), "direct", 8, 8) == 0
    assert count_added_elements(HypercolumnSpec(1, 4), "stairstep", 8, 8) == 0
    for scheme in ("direct", "stairstep"):
        assert count_added_elements(HypercolumnSpec(2, 4), scheme, 8, 6) == 8 * 6 * 4


def test_addition_counts_diverge_from_three_levels():
    # direct adds n-1 full-resolution maps; stairstep adds one map per level at
    # that level's own resolution, so it performs fewer scalar additions
    h, w, d = 16, 16, 2
    for n in (3, 4, 5):
        spec = HypercolumnSpec(n, d)
        direct = count_added_elements(spec, "direct", h, w)
        stair = count_added_elements(spec, "stairstep", h, w)
        assert direct == (n - 1) * h * w * d
        assert stair == sum(h * w * d // 4**i for i in range(n - 1))
        assert stair < direct


def test_counter_tallies_elements():
    c = AdditionCounter()
    c.add(np.zeros((2, 3)), np.ones((2, 3)))
    assert c.count == 6
