"""Multi-part detection + polygon loss and its analytic gradient.

Per slot ``(cell i, anchor j)`` with label indicator ``q`` the total is::

    q * (l1 + l2 + l5)  +  l3  +  l4

* ``l1 = z * [H(tx, tx^) + H(ty, ty^)]``
* ``l2 = 0.5 * z * [(tw - w^)^2 + (th - h^)^2]`` with ``tw = log(w / a_w)``
* ``l3 = q * H(1, q^) + (1 - q) * H(0, q^) * keep`` (``keep = not ignored``)
* ``l4 = sum_k H(C_k, C^_k)`` over every slot; empty slots have all-zero targets
* ``l5 = 0.2 * z * sum_k [g_k (log(d_k / a_d) - alpha^_k)^2 + g_k H(b_k, beta^_k) + H(g_k, gamma^_k)]``

``H`` is binary cross-entropy against a logit, ``z = 2 - w h`` uses the box
size normalised by the input size, ``d_k`` is the absolute vertex distance
and ``a_d`` the anchor diagonal. The confidence term sits outside the label
gate so that its no-object branch is active on empty slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .label_grid import AnchorSet, GridSpec, SlotLayout, vertex_distance_over_anchor

BOX_WEIGHT = 0.5
POLYGON_WEIGHT = 0.2


def bce(target, logit):
    """Binary cross-entropy ``H(target, sigmoid(logit))`` in log-sum-exp form."""
    target = np.asarray(target, dtype=float)
    logit = np.asarray(logit, dtype=float)
    out = np.maximum(logit, 0.0) - logit * target + np.log1p(np.exp(-np.abs(logit)))
    return out if out.ndim else float(out)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = 0.5 * (1.0 + np.tanh(0.5 * x))
    return out if out.ndim else float(out)


@dataclass
class LossBreakdown:
    l1: float
    l2: float
    l3: float
    l4: float
    l5: float
    l5_alpha: float
    l5_beta: float
    l5_gamma: float
    per_slot: Optional[np.ndarray] = None

    @property
    def total(self) -> float:
        return math.fsum((self.l1, self.l2, self.l3, self.l4, self.l5))


def _fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=float).ravel())


class _Terms:
    """Shared pieces of the loss and its gradient for one (pred, target) pair."""

    def __init__(self, pred, target, grid, anchors, n_classes, ignore):
        pred = np.asarray(pred, dtype=float)
        target = np.asarray(target, dtype=float)
        if pred.shape != target.shape:
            raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
        if pred.ndim != 4 or pred.shape[2] != len(anchors):
            raise ValueError(f"expected (G_h, G_w, {len(anchors)}, depth), got {pred.shape}")
        self.layout = SlotLayout.from_depth(pred.shape[-1], n_classes)
        self.pred, self.target = pred, target
        slots = pred.shape[:-1]
        if ignore is None:
            ignore = np.zeros(slots, dtype=bool)
        ignore = np.asarray(ignore, dtype=bool)
        if ignore.shape != slots:
            raise ValueError(f"ignore mask shape {ignore.shape} != slot shape {slots}")
        self.q = target[..., 4]
        self.keep = np.where(ignore, 0.0, 1.0)
        a = anchors.array
        w = a[:, 0] * np.exp(target[..., 2]) / grid.input_w
        h = a[:, 1] * np.exp(target[..., 3]) / grid.input_h
        # only labelled slots carry meaningful sizes; z is gated by q anyway
        self.z = np.where(self.q > 0, 2.0 - w * h, 0.0)
        nv = self.layout.n_vertices
        self.polar_pred = pred[..., self.layout.polar].reshape(slots + (nv, 3))
        self.polar_tgt = target[..., self.layout.polar].reshape(slots + (nv, 3))
        if nv:
            gamma = self.polar_tgt[..., 2]
            d = vertex_distance_over_anchor(target, anchors, self.layout)
            live = (gamma > 0) & (self.q[..., None] > 0)
            with np.errstate(divide="ignore"):
                self.alpha_tgt = np.where(live, np.log(np.where(live, d, 1.0)), 0.0)
        else:
            self.alpha_tgt = np.zeros(slots + (0,))


def loss_total(
    pred: np.ndarray,
    target: np.ndarray,
    grid: GridSpec,
    anchors: AnchorSet,
    n_classes: int,
    ignore: Optional[np.ndarray] = None,
    per_slot: bool = False,
) -> LossBreakdown:
    """Evaluate every loss part; ``ignore`` is the mask from ``compute_ignore_mask``."""
    t = _Terms(pred, target, grid, anchors, n_classes, ignore)
    p, g, q, z = t.pred, t.target, t.q, t.z
    l1 = q * z * (bce(g[..., 0], p[..., 0]) + bce(g[..., 1], p[..., 1]))
    l2 = q * BOX_WEIGHT * z * ((g[..., 2] - p[..., 2]) ** 2 + (g[..., 3] - p[..., 3]) ** 2)
    conf = bce(q, p[..., 4])
    l3 = q * conf + (1.0 - q) * conf * t.keep
    l4 = bce(g[..., t.layout.classes], p[..., t.layout.classes]).sum(axis=-1)
    gamma = t.polar_tgt[..., 2]
    w5 = (q * POLYGON_WEIGHT * z)[..., None]
    l5a = w5 * gamma * (t.alpha_tgt - t.polar_pred[..., 0]) ** 2
    l5b = w5 * gamma * bce(t.polar_tgt[..., 1], t.polar_pred[..., 1])
    l5g = w5 * bce(gamma, t.polar_pred[..., 2])
    parts = dict(l1=_fsum(l1), l2=_fsum(l2), l3=_fsum(l3), l4=_fsum(l4))
    alpha, beta, gam = _fsum(l5a), _fsum(l5b), _fsum(l5g)
    slot_total = None
    if per_slot:
        slot_total = l1 + l2 + l3 + l4 + (l5a + l5b + l5g).sum(axis=-1)
    return LossBreakdown(
        **parts,
        l5=math.fsum((alpha, beta, gam)),
        l5_alpha=alpha,
        l5_beta=beta,
        l5_gamma=gam,
        per_slot=slot_total,
    )


def loss_gradient(
    pred: np.ndarray,
    target: np.ndarray,
    grid: GridSpec,
    anchors: AnchorSet,
    n_classes: int,
    ignore: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Analytic derivative of ``loss_total(...).total`` w.r.t. every raw prediction."""
    t = _Terms(pred, target, grid, anchors, n_classes, ignore)
    p, g, q, z = t.pred, t.target, t.q, t.z
    grad = np.zeros_like(p)
    grad[..., 0] = q * z * (sigmoid(p[..., 0]) - g[..., 0])
    grad[..., 1] = q * z * (sigmoid(p[..., 1]) - g[..., 1])
    grad[..., 2] = q * 2 * BOX_WEIGHT * z * (p[..., 2] - g[..., 2])
    grad[..., 3] = q * 2 * BOX_WEIGHT * z * (p[..., 3] - g[..., 3])
    grad[..., 4] = (q + (1.0 - q) * t.keep) * (sigmoid(p[..., 4]) - q)
    cls = t.layout.classes
    grad[..., cls] = sigmoid(p[..., cls]) - g[..., cls]
    if t.layout.n_vertices:
        gamma = t.polar_tgt[..., 2]
        w5 = (q * POLYGON_WEIGHT * z)[..., None]
        pp = t.polar_pred
        gp = np.zeros_like(pp)
        gp[..., 0] = w5 * gamma * 2.0 * (pp[..., 0] - t.alpha_tgt)
        gp[..., 1] = w5 * gamma * (sigmoid(pp[..., 1]) - t.polar_tgt[..., 1])
        gp[..., 2] = w5 * (sigmoid(pp[..., 2]) - gamma)
        grad[..., t.layout.polar] = gp.reshape(p.shape[:-1] + (-1,))
    return grad


def finite_difference_gradient(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn`` at every entry of ``x``."""
    x = np.array(x, dtype=float)
    out = np.zeros_like(x)
    flat, grad = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = fn(x)
        flat[i] = keep - step
        down = fn(x)
        flat[i] = keep
        grad[i] = (up - down) / (2.0 * step)
    return out


def gradient_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8):
    """``(max relative error, max absolute error on tiny entries)``.

    Entries with ``|analytic| < floor`` are judged absolutely, the rest by
    ``|a - n| / max(|a|, |n|)``.
    """
    a, n = np.ravel(analytic), np.ravel(numeric)
    tiny = np.abs(a) < floor
    diff = np.abs(a - n)
    rel = diff[~tiny] / np.maximum(np.abs(a[~tiny]), np.abs(n[~tiny]))
    return (
        float(rel.max()) if rel.size else 0.0,
        float(diff[tiny].max()) if tiny.any() else 0.0,
    )


def random_instance(rng: np.random.Generator, grid_hw=(2, 2), n_anchors=2, n_classes=2, n_vertices=3):
    """Random ``(pred, target, grid, anchors, ignore)`` for gradient checking.

    Sizes and offsets are drawn directly in target space; at least one slot is
    labelled and one empty slot is ignored whenever the grid allows.
    """
    gh, gw = grid_hw
    stride = 8
    grid = GridSpec(gw * stride, gh * stride, Fraction(1, stride))
    anchors = AnchorSet(tuple(tuple(rng.uniform(2.0, 12.0, 2)) for _ in range(n_anchors)))
    layout = SlotLayout(n_classes, n_vertices)
    slots = (gh, gw, n_anchors)
    target = np.zeros(slots + (layout.depth,))
    q = rng.random(slots) < 0.5
    q.flat[rng.integers(q.size)] = True
    target[..., 0:2] = rng.uniform(0.0, 1.0, slots + (2,))
    target[..., 2:4] = rng.uniform(-0.7, 0.7, slots + (2,))
    target[..., 4] = q
    cls = rng.integers(n_classes, size=slots)
    onehot = np.eye(n_classes)[cls]
    target[..., layout.classes] = onehot * q[..., None]
    polar = np.zeros(slots + (n_vertices, 3))
    gam = rng.random(slots + (n_vertices,)) < 0.6
    polar[..., 0] = np.where(gam, rng.uniform(0.05, 0.5, gam.shape), 0.0)
    polar[..., 1] = np.where(gam, rng.uniform(0.0, 1.0, gam.shape), 0.0)
    polar[..., 2] = gam
    target[..., layout.polar] = (polar * q[..., None, None]).reshape(slots + (-1,))
    target[~q, :4] = 0.0
    pred = rng.normal(0.0, 1.5, target.shape)
    ignore = (~q) & (rng.random(slots) < 0.3)
    return pred, target, grid, anchors, ignore
