"""Circular loss for rotated boxes, its analytic gradient, and the
Smooth-L1 regression baseline.

The circular loss compares two boxes in diagonal-arc form through three
terms:

* ``area``: one minus the IoU of the circumscribed circles, with the union
  written as ``S - I`` (summed disk areas minus their overlap);
* ``angle``: one minus the cosine between the diagonal vectors ``p2 - p1``;
* ``arc``: squared difference of the ``beta`` parameters.

``total = area + lambda1 * angle + lambda2 * arc``. All three terms are
invariant under a common translation, rotation, and uniform scaling of both
boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateBox
from .geometry import AABB, FiveBB, MIN_DIAGONAL

# Distance from a circle-overlap branch boundary below which the gradient is
# flagged as one-sided.
BRANCH_EPS = 1e-9


@dataclass(frozen=True)
class LossWeights:
    """Term weights. The defaults are the tuned operating point."""

    lambda1: float = 0.5
    lambda2: float = 0.3


@dataclass(frozen=True)
class LossBreakdown:
    area: float
    angle: float
    arc: float
    total: float


@dataclass(frozen=True)
class Grad5:
    """Gradient of the total circular loss in the five box parameters.

    ``boundary_warning`` is set when the circle configuration sits within
    ``BRANCH_EPS`` of a case boundary (tangency), where the reported values
    are the one-sided gradient of the active branch.
    """

    d_x1: float
    d_y1: float
    d_x2: float
    d_y2: float
    d_beta: float
    boundary_warning: bool = False

    def as_vector(self) -> tuple[float, float, float, float, float]:
        return (self.d_x1, self.d_y1, self.d_x2, self.d_y2, self.d_beta)


@dataclass(frozen=True)
class SmoothL1Config:
    sigma: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.sigma) or self.sigma <= 0.0:
            raise DegenerateBox(f"sigma must be positive, got {self.sigma}")


def _circle_terms(pred: FiveBB, gt: FiveBB):
    """Radii of both circumscribed circles and their center distance."""
    r = 0.5 * pred.p1.distance_to(pred.p2)
    rg = 0.5 * gt.p1.distance_to(gt.p2)
    mx = 0.5 * (pred.p1.x + pred.p2.x) - 0.5 * (gt.p1.x + gt.p2.x)
    my = 0.5 * (pred.p1.y + pred.p2.y) - 0.5 * (gt.p1.y + gt.p2.y)
    d = math.hypot(mx, my)
    return r, rg, d, mx, my


def _intersection_area(r: float, rg: float, d: float) -> float:
    if d >= r + rg:
        return 0.0
    if d <= abs(r - rg):
        return math.pi * min(r, rg) ** 2
    r2, rg2 = r * r, rg * rg
    alpha = math.acos(max(-1.0, min(1.0, (d * d + r2 - rg2) / (2.0 * d * r))))
    gamma = math.acos(max(-1.0, min(1.0, (d * d + rg2 - r2) / (2.0 * d * rg))))
    p = (d + r + rg) * (d + r - rg) * (d - r + rg) * (r + rg - d)
    return r2 * alpha + rg2 * gamma - 0.5 * math.sqrt(max(0.0, p))


def circular_loss(pred: FiveBB, gt: FiveBB, weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Evaluate the three loss terms and their weighted total."""
    r, rg, d, _, _ = _circle_terms(pred, gt)
    inter = _intersection_area(r, rg, d)
    s = math.pi * (r * r + rg * rg)
    area = 1.0 - inter / (s - inter)

    v = pred.p2 - pred.p1
    g = gt.p2 - gt.p1
    angle = 1.0 - v.dot(g) / (v.norm() * g.norm())

    arc = (pred.beta - gt.beta) ** 2
    total = area + weights.lambda1 * angle + weights.lambda2 * arc
    return LossBreakdown(area=area, angle=angle, arc=arc, total=total)


def circular_loss_grad(pred: FiveBB, gt: FiveBB, weights: LossWeights = LossWeights()) -> Grad5:
    """Analytic gradient of the total loss in (x1, y1, x2, y2, beta).

    The lens-area partials collapse to closed forms: with ``u`` the cosine at
    the predicted circle's center and ``P`` the Heron product of (d, r, rg),
    ``dI/dr = 2 r acos(u)`` and ``dI/dd = -sqrt(P) / d``. Containment and
    disjoint branches use their own (constant or radius-only) derivatives.
    """
    r, rg, d, mx, my = _circle_terms(pred, gt)

    boundary = (
        abs(d - (r + rg)) < BRANCH_EPS
        or abs(d - abs(r - rg)) < BRANCH_EPS
    )

    # dI/dr and dI/dd on the active branch.
    if d >= r + rg:
        inter, di_dr, di_dd = 0.0, 0.0, 0.0
    elif d <= abs(r - rg):
        inter = math.pi * min(r, rg) ** 2
        di_dr = 2.0 * math.pi * r if r <= rg else 0.0
        di_dd = 0.0
    else:
        inter = _intersection_area(r, rg, d)
        u = max(-1.0, min(1.0, (d * d + r * r - rg * rg) / (2.0 * d * r)))
        p = (d + r + rg) * (d + r - rg) * (d - r + rg) * (r + rg - d)
        di_dr = 2.0 * r * math.acos(u)
        di_dd = -math.sqrt(max(0.0, p)) / d

    s = math.pi * (r * r + rg * rg)
    denom = (s - inter) ** 2
    dl_di = -s / denom
    dl_ds = inter / denom
    ds_dr = 2.0 * math.pi * r

    darea_dr = dl_di * di_dr + dl_ds * ds_dr
    darea_dd = dl_di * di_dd

    # Chain into the diagonal endpoints. r depends on the diagonal length,
    # d on the midpoint offset from the target's center.
    vx, vy = pred.p2.x - pred.p1.x, pred.p2.y - pred.p1.y
    nv = math.hypot(vx, vy)
    dr_dx2 = vx / (2.0 * nv)
    dr_dy2 = vy / (2.0 * nv)
    if d > MIN_DIAGONAL:
        dd_dx = mx / (2.0 * d)
        dd_dy = my / (2.0 * d)
    else:
        dd_dx = dd_dy = 0.0

    area_x1 = -darea_dr * dr_dx2 + darea_dd * dd_dx
    area_y1 = -darea_dr * dr_dy2 + darea_dd * dd_dy
    area_x2 = darea_dr * dr_dx2 + darea_dd * dd_dx
    area_y2 = darea_dr * dr_dy2 + darea_dd * dd_dy

    # Angle term: L = 1 - (v . g) / (|v| |g|) in the diagonal vector v.
    gx, gy = gt.p2.x - gt.p1.x, gt.p2.y - gt.p1.y
    ng = math.hypot(gx, gy)
    dot = vx * gx + vy * gy
    inv = 1.0 / (nv * ng)
    dang_dvx = -gx * inv + dot * vx / (nv * nv) * inv
    dang_dvy = -gy * inv + dot * vy / (nv * nv) * inv

    w1, w2 = weights.lambda1, weights.lambda2
    return Grad5(
        d_x1=area_x1 - w1 * dang_dvx,
        d_y1=area_y1 - w1 * dang_dvy,
        d_x2=area_x2 + w1 * dang_dvx,
        d_y2=area_y2 + w1 * dang_dvy,
        d_beta=w2 * 2.0 * (pred.beta - gt.beta),
        boundary_warning=boundary,
    )


def smooth_l1(z: float, cfg: SmoothL1Config = SmoothL1Config()) -> float:
    """Huber-style penalty: quadratic within ``|z| < 1/sigma^2``, linear tails."""
    s2 = cfg.sigma * cfg.sigma
    if abs(z) < 1.0 / s2:
        return 0.5 * s2 * z * z
    return abs(z) - 0.5 / s2


def smooth_l1_deriv(z: float, cfg: SmoothL1Config = SmoothL1Config()) -> float:
    s2 = cfg.sigma * cfg.sigma
    if abs(z) < 1.0 / s2:
        return s2 * z
    return math.copysign(1.0, z)


def smooth_l1_vector(pred, gt, cfg: SmoothL1Config = SmoothL1Config()) -> float:
    """Sum of elementwise Smooth-L1 penalties over two equal-length vectors."""
    pred = tuple(pred)
    gt = tuple(gt)
    if len(pred) != len(gt):
        raise DegenerateBox(f"length mismatch {len(pred)} vs {len(gt)}")
    return sum(smooth_l1(p - g, cfg) for p, g in zip(pred, gt))


def regression_deltas(pred: AABB, gt: AABB) -> tuple[float, float, float, float]:
    """Normalized center offsets and log size ratios of axis-aligned boxes."""
    dx = (gt.cx - pred.cx) / pred.w
    dy = (gt.cy - pred.cy) / pred.h
    dw = math.log(gt.w / pred.w)
    dh = math.log(gt.h / pred.h)
    return (dx, dy, dw, dh)


def baseline_reg_loss(pred: AABB, gt: AABB, cfg: SmoothL1Config = SmoothL1Config()) -> float:
    """Smooth-L1 applied to the four regression deltas, summed."""
    return sum(smooth_l1(z, cfg) for z in regression_deltas(pred, gt))
