"""Single-output feature aggregation over a dyadic pyramid of feature maps.

Feature maps are ``(height, width, channels)`` arrays. Level ``i`` (0-based
here) is ``2**i`` times coarser than level 0. Two aggregation schemes are
provided:

* direct: every aligned level is upsampled straight to level-0 resolution
  and the results are summed;
* stairstep: starting from the coarsest level, repeatedly upsample by 2 and
  add the next finer aligned level.

Both sum per output pixel in the same order (coarsest contribution first), so
with nearest-neighbour upsampling they agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

Mode = Literal["nearest", "bilinear"]


@dataclass(frozen=True)
class HypercolumnSpec:
    levels: int
    target_channels: int = 64
    interpolation: Mode = "nearest"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("need at least one level")
        if self.target_channels < 1:
            raise ValueError("target channel count must be positive")
        if self.interpolation not in ("nearest", "bilinear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


class AdditionCounter:
    """Tally of scalar additions performed during aggregation."""

    def __init__(self):
        self.count = 0

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.count += a.size
        return a + b


def channel_align(f: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """1x1 projection of ``(H, W, C)`` features through ``(C, delta)`` weights."""
    f = np.asarray(f, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if f.ndim != 3 or weights.ndim != 2 or weights.shape[0] != f.shape[2]:
        raise ValueError(f"cannot project features {f.shape} with weights {weights.shape}")
    return np.einsum("hwc,cd->hwd", f, weights)


def _bilinear_axis(n: int, factor: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = (np.arange(n * factor) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    return lo, hi, src - lo


def upsample(f: np.ndarray, factor: int, mode: Mode = "nearest") -> np.ndarray:
    """Enlarge the two spatial axes of ``f`` by an integer ``factor``.

    Bilinear sampling uses the half-pixel convention (source coordinate
    ``(i + 0.5) / factor - 0.5``) with coordinates clamped to the edge pixels.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsampling factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    f = np.asarray(f, dtype=float)
    if factor == 1:
        return f.copy()
    if mode == "nearest":
        return np.repeat(np.repeat(f, factor, axis=0), factor, axis=1)
    if mode != "bilinear":
        raise ValueError(f"unknown interpolation {mode!r}")
    r0, r1, fr = _bilinear_axis(f.shape[0], factor)
    rows = f[r0] * (1.0 - fr)[:, None, None] + f[r1] * fr[:, None, None]
    c0, c1, fc = _bilinear_axis(f.shape[1], factor)
    return rows[:, c0] * (1.0 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]


def _aligned(levels, weights, spec: HypercolumnSpec) -> list[np.ndarray]:
    if len(levels) != spec.levels:
        raise ValueError(f"spec declares {spec.levels} levels, got {len(levels)}")
    h0, w0 = np.shape(levels[0])[:2]
    out = []
    for i, level in enumerate(levels):
        level = np.asarray(level, dtype=float)
        if h0 % 2**i or w0 % 2**i or level.shape[:2] != (h0 // 2**i, w0 // 2**i):
            raise ValueError(
                f"level {i} has spatial size {level.shape[:2]}, "
                f"expected ({h0 / 2**i:g}, {w0 / 2**i:g})"
            )
        if weights is not None:
            level = channel_align(level, weights[i])
        if level.shape[2] != spec.target_channels:
            raise ValueError(f"level {i} has {level.shape[2]} channels, expected {spec.target_channels}")
        out.append(level)
    return out


def hypercolumn_direct(
    levels: Sequence[np.ndarray],
    spec: HypercolumnSpec,
    weights: Optional[Sequence[np.ndarray]] = None,
    counter: Optional[AdditionCounter] = None,
) -> np.ndarray:
    """Sum of every aligned level upsampled directly to the finest resolution.

    Without ``weights`` the levels must already carry ``target_channels``.
    """
    counter = counter or AdditionCounter()
    maps = _aligned(levels, weights, spec)
    n = len(maps)
    acc = upsample(maps[-1], 2 ** (n - 1), spec.interpolation)
    for i in range(n - 2, -1, -1):
        acc = counter.add(acc, upsample(maps[i], 2**i, spec.interpolation))
    return acc


def hypercolumn_stairstep(
    levels: Sequence[np.ndarray],
    spec: HypercolumnSpec,
    weights: Optional[Sequence[np.ndarray]] = None,
    counter: Optional[AdditionCounter] = None,
) -> np.ndarray:
    """Fold from the coarsest level: upsample by 2, add the next finer level."""
    counter = counter or AdditionCounter()
    maps = _aligned(levels, weights, spec)
    acc = maps[-1]
    for finer in reversed(maps[:-1]):
        acc = counter.add(upsample(acc, 2, spec.interpolation), finer)
    return acc


def count_added_elements(
    spec: HypercolumnSpec, scheme: Literal["direct", "stairstep"], height: int, width: int
) -> int:
    """Scalar additions performed by one aggregation on a ``height x width`` base level.

    Counted by running the aggregation on zero maps through an instrumented
    adder, so the count reflects the code path rather than a formula.
    """
    fn = {"direct": hypercolumn_direct, "stairstep": hypercolumn_stairstep}[scheme]
    levels = [
        np.zeros((height // 2**i, width // 2**i, spec.target_channels)) for i in range(spec.levels)
    ]
    counter = AdditionCounter()
    fn(levels, spec, counter=counter)
    return counter.count
