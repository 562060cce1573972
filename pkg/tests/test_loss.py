import math

import numpy as np
import pytest

from arctrack.errors import DegenerateBox
from arctrack.geometry import AABB, FiveBB, Point2, rotate
from arctrack.loss import (
    LossWeights,
    SmoothL1Config,
    baseline_reg_loss,
    circular_loss,
    circular_loss_grad,
    regression_deltas,
    smooth_l1,
    smooth_l1_deriv,
    smooth_l1_vector,
)
from helpers import random_five

W = LossWeights()


def fd_grad(pred: FiveBB, gt: FiveBB, weights: LossWeights, step: float = 1e-6):
    """Central finite differences of the total loss in the five parameters."""
    base = list(pred.as_vector())
    out = []
    for i in range(5):
        hi = base.copy()
        lo = base.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = circular_loss(FiveBB.from_vector(hi), gt, weights).total
        f_lo = circular_loss(FiveBB.from_vector(lo), gt, weights).total
        out.append((f_hi - f_lo) / (2 * step))
    return out


def random_pair_off_boundary(rng, scale=6.0):
    """Random box pair kept clear of circle-case boundaries and beta limits."""
    while True:
        pred = random_five(rng, scale)
        gt = random_five(rng, scale)
        if not (0.06 < pred.beta < 0.94):
            continue
        r = 0.5 * pred.p1.distance_to(pred.p2)
        g = 0.5 * gt.p1.distance_to(gt.p2)
        mid_p = Point2((pred.p1.x + pred.p2.x) / 2, (pred.p1.y + pred.p2.y) / 2)
        mid_g = Point2((gt.p1.x + gt.p2.x) / 2, (gt.p1.y + gt.p2.y) / 2)
        d = mid_p.distance_to(mid_g)
        if abs(d - (r + g)) < 1e-3 or abs(d - abs(r - g)) < 1e-3 or d < 1e-3:
            continue
        return pred, gt


class TestBreakdown:
    def test_identical_boxes(self):
        box = FiveBB(Point2(0, 0), Point2(2, 2), 0.5)
        bd = circular_loss(box, box, W)
        assert bd.area == pytest.approx(0.0, abs=1e-12)
        assert bd.angle == pytest.approx(0.0, abs=1e-12)
        assert bd.arc == 0.0
        assert bd.total == pytest.approx(0.0, abs=1e-12)

    def test_reversed_diagonal(self):
        gt = FiveBB(Point2(0, 0), Point2(2, 2), 0.5)
        pred = FiveBB(Point2(2, 2), Point2(0, 0), 0.5)
        bd = circular_loss(pred, gt, W)
        assert bd.area == pytest.approx(0.0, abs=1e-12)
        assert bd.angle == pytest.approx(2.0, abs=1e-12)
        assert bd.arc == 0.0
        assert bd.total == pytest.approx(2 * W.lambda1, abs=1e-12)

    def test_disjoint_perpendicular(self):
        gt = FiveBB(Point2(0, 0), Point2(2, 0), 0.5)
        pred = FiveBB(Point2(10, -1), Point2(10, 1), 0.2)
        bd = circular_loss(pred, gt, W)
        assert bd.area == pytest.approx(1.0, abs=1e-12)
        assert bd.angle == pytest.approx(1.0, abs=1e-12)
        assert bd.arc == pytest.approx(0.09, abs=1e-12)
        assert bd.total == pytest.approx(1.0 + W.lambda1 + 0.09 * W.lambda2, abs=1e-12)

    def test_term_ranges(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            bd = circular_loss(random_five(rng), random_five(rng), W)
            assert 0.0 <= bd.area <= 1.0
            assert 0.0 <= bd.angle <= 2.0
            assert 0.0 <= bd.arc < 1.0
            assert bd.total == pytest.approx(
                bd.area + W.lambda1 * bd.angle + W.lambda2 * bd.arc, abs=1e-12
            )

    def test_custom_weights(self):
        gt = FiveBB(Point2(0, 0), Point2(2, 0), 0.5)
        pred = FiveBB(Point2(10, -1), Point2(10, 1), 0.2)
        bd = circular_loss(pred, gt, LossWeights(lambda1=1.0, lambda2=2.0))
        assert bd.total == pytest.approx(1.0 + 1.0 + 0.18, abs=1e-12)


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            pred, gt = random_pair_off_boundary(rng)
            analytic = circular_loss_grad(pred, gt, W).as_vector()
            numeric = fd_grad(pred, gt, W)
            scale = max(max(abs(a) for a in analytic), 1e-6)
            for a, n in zip(analytic, numeric):
                assert abs(a - n) <= 1e-4 * max(abs(a), abs(n), 1e-3 * scale)

    def test_zero_at_perfect_match(self):
        box = FiveBB(Point2(1, 1), Point2(4, 3), 0.4)
        g = circular_loss_grad(box, box, W)
        # d = 0 sits on the containment boundary for equal radii.
        assert g.boundary_warning
        assert g.as_vector()[4] == 0.0

    def test_beta_component(self):
        gt = FiveBB(Point2(0, 0), Point2(2, 2), 0.5)
        pred = FiveBB(Point2(0, 0), Point2(2, 2), 0.7)
        g = circular_loss_grad(pred, gt, W)
        assert g.d_beta == pytest.approx(W.lambda2 * 2 * 0.2, abs=1e-12)

    def test_boundary_flag_on_tangency(self):
        gt = FiveBB(Point2(0, 0), Point2(2, 0), 0.5)     # circle r=1 at (1,0)
        pred = FiveBB(Point2(2, 0), Point2(4, 0), 0.5)   # circle r=1 at (3,0), d=2
        g = circular_loss_grad(pred, gt, W)
        assert g.boundary_warning

    def test_off_boundary_not_flagged(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            pred, gt = random_pair_off_boundary(rng)
            assert not circular_loss_grad(pred, gt, W).boundary_warning

    def test_disjoint_gradient_only_angle_and_arc(self):
        gt = FiveBB(Point2(0, 0), Point2(2, 0), 0.5)
        pred = FiveBB(Point2(100, 0), Point2(102, 0), 0.3)
        g = circular_loss_grad(pred, gt, W)
        numeric = fd_grad(pred, gt, W)
        for a, n in zip(g.as_vector(), numeric):
            assert a == pytest.approx(n, abs=1e-7)


class TestSimilarityInvariance:
    def test_translation_rotation_scale(self):
        rng = np.random.default_rng(41)
        for _ in range(200):
            pred, gt = random_pair_off_boundary(rng)
            before = circular_loss(pred, gt, W)
            shift = Point2(*rng.uniform(-50, 50, 2))
            theta = rng.uniform(0, 2 * math.pi)
            scale = rng.uniform(0.2, 5.0)

            def sim(p: Point2) -> Point2:
                q = rotate(p, theta)
                return Point2(q.x * scale + shift.x, q.y * scale + shift.y)

            pred_t = FiveBB(sim(pred.p1), sim(pred.p2), pred.beta)
            gt_t = FiveBB(sim(gt.p1), sim(gt.p2), gt.beta)
            after = circular_loss(pred_t, gt_t, W)
            assert after.area == pytest.approx(before.area, abs=1e-9)
            assert after.angle == pytest.approx(before.angle, abs=1e-9)
            assert after.arc == pytest.approx(before.arc, abs=1e-9)
            assert after.total == pytest.approx(before.total, abs=1e-9)


class TestSmoothL1:
    def test_linear_tail(self):
        assert smooth_l1(2.0) == pytest.approx(1.5, abs=1e-12)

    def test_quadratic_core(self):
        assert smooth_l1(0.5) == pytest.approx(0.125, abs=1e-12)

    def test_continuity_at_branch_point(self):
        for sigma in (0.5, 1.0, 2.0):
            cfg = SmoothL1Config(sigma)
            z = 1.0 / sigma ** 2
            inner = smooth_l1(z - 1e-12, cfg)
            outer = smooth_l1(z + 1e-12, cfg)
            assert inner == pytest.approx(outer, abs=1e-9)

    def test_derivative_matches_fd(self):
        rng = np.random.default_rng(3)
        cfg = SmoothL1Config(1.3)
        for z in rng.uniform(-3, 3, 100):
            if abs(abs(z) - 1.0 / cfg.sigma ** 2) < 1e-4:
                continue
            fd = (smooth_l1(z + 1e-6, cfg) - smooth_l1(z - 1e-6, cfg)) / 2e-6
            assert smooth_l1_deriv(z, cfg) == pytest.approx(fd, abs=1e-6)

    def test_vector_form(self):
        assert smooth_l1_vector([0.0, 2.0], [0.0, 0.0]) == pytest.approx(1.5, abs=1e-12)
        with pytest.raises(DegenerateBox):
            smooth_l1_vector([1.0], [1.0, 2.0])

    def test_rejects_bad_sigma(self):
        with pytest.raises(DegenerateBox):
            SmoothL1Config(0.0)


class TestRegressionBaseline:
    def test_deltas(self):
        pred = AABB(0, 0, 2, 2)
        gt = AABB(1, 1, 4, 2)
        dx, dy, dw, dh = regression_deltas(pred, gt)
        assert dx == pytest.approx(0.5)
        assert dy == pytest.approx(0.5)
        assert dw == pytest.approx(math.log(2))
        assert dh == pytest.approx(0.0)

    def test_identical_boxes_zero(self):
        box = AABB(3, 4, 5, 6)
        assert baseline_reg_loss(box, box) == 0.0

    def test_matches_manual_sum(self):
        pred = AABB(0, 0, 2, 2)
        gt = AABB(1, 1, 4, 2)
        expected = sum(smooth_l1(z) for z in regression_deltas(pred, gt))
        assert baseline_reg_loss(pred, gt) == pytest.approx(expected, abs=1e-12)
