import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from placekit.errors import InputError
from placekit.geometry import (Box, aspect_ratio_feature, assign_positives,
                               build_anchor_grid, decode_placement, diou,
                               diou_grad, encode_target, iou, iou_grad)


def finite_diff(fn, a: Box, step=1e-5):
    """Central finite differences of fn(a) over a's four parameters."""
    vals = [a.x, a.y, a.w, a.h]
    out = []
    for i in range(4):
        hi = vals.copy()
        lo = vals.copy()
        hi[i] += step
        lo[i] -= step
        out.append((fn(Box(*hi)) - fn(Box(*lo))) / (2 * step))
    return out


boxes = st.builds(
    Box,
    x=st.floats(-0.5, 1.5), y=st.floats(-0.5, 1.5),
    w=st.floats(0.05, 1.5), h=st.floats(0.05, 1.5),
)


class TestIoU:
    def test_identity(self):
        assert iou(Box(0, 0, 1, 1), Box(0, 0, 1, 1)) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 1, 1), Box(2, 0, 1, 1)) == 0.0

    def test_half_overlap(self):
        # intersection 1, union 3
        assert iou(Box(0, 0, 2, 1), Box(1, 0, 2, 1)) == pytest.approx(1 / 3)

    @given(boxes, boxes)
    @settings(max_examples=100, deadline=None)
    def test_bounds_and_symmetry(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(iou(b, a))


class TestDIoU:
    def test_identical(self):
        assert diou(Box(0, 0, 1, 1), Box(0, 0, 1, 1)) == 1.0

    def test_disjoint_hand_value(self):
        # IoU 0, center distance^2 = 4, enclosing 3x1 diag^2 = 10
        assert diou(Box(0, 0, 1, 1), Box(2, 0, 1, 1)) == pytest.approx(-0.4, abs=1e-12)

    def test_concentric(self):
        assert diou(Box(0.25, 0.25, 0.5, 0.5), Box(0, 0, 1, 1)) == pytest.approx(0.25, abs=1e-12)

    @given(boxes, boxes)
    @settings(max_examples=100, deadline=None)
    def test_bounds(self, a, b):
        v = diou(a, b)
        assert -1.0 <= v <= iou(a, b) + 1e-12

    @given(boxes, boxes, st.floats(-2, 2), st.floats(-2, 2))
    @settings(max_examples=50, deadline=None)
    def test_translation_invariance(self, a, b, tx, ty):
        shifted = diou(Box(a.x + tx, a.y + ty, a.w, a.h),
                       Box(b.x + tx, b.y + ty, b.w, b.h))
        assert shifted == pytest.approx(diou(a, b), abs=1e-9)

    @given(boxes, boxes, st.floats(0.5, 3.0))
    @settings(max_examples=50, deadline=None)
    def test_scale_invariance(self, a, b, s):
        scaled = diou(Box(a.x * s, a.y * s, a.w * s, a.h * s),
                      Box(b.x * s, b.y * s, b.w * s, b.h * s))
        assert scaled == pytest.approx(diou(a, b), abs=1e-9)


class TestDIoUGrad:
    def test_identical_boxes_zero_offset_grad(self):
        a = Box(0, 0, 1, 1)
        g = diou_grad(a, a)
        fd = finite_diff(lambda bx: diou(bx, a), a)
        assert abs(g[0] - fd[0]) < 1e-3
        assert abs(g[1] - fd[1]) < 1e-3

    def test_random_pairs_match_finite_differences(self):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 100:
            a = Box(*rng.uniform(0.0, 0.8, 2), *rng.uniform(0.1, 0.9, 2))
            b = Box(*rng.uniform(0.0, 0.8, 2), *rng.uniform(0.1, 0.9, 2))
            g = diou_grad(a, b)
            fd = finite_diff(lambda bx: diou(bx, b), a)
            for gi, fi in zip(g, fd):
                denom = max(abs(fi), 1e-6)
                assert abs(gi - fi) / denom < 1e-3
            checked += 1

    def test_disjoint_pair_penalty_only(self):
        # IoU term is flat for disjoint boxes: whole gradient comes from
        # the center-distance penalty. Offset b slightly in y so no edges
        # coincide and central differences are valid everywhere.
        a, b = Box(0, 0, 1, 1), Box(2, 0.001, 1, 1.002)
        assert iou_grad(a, b) == (0.0, 0.0, 0.0, 0.0)
        g = diou_grad(a, b)
        fd = finite_diff(lambda bx: diou(bx, b), a)
        for gi, fi in zip(g, fd):
            assert abs(gi - fi) < 1e-3

    def test_coincident_edge_takes_one_sided_derivative(self):
        # a's bottom edge ties b's: d/dh is one-sided (h growing past the
        # tie changes the enclosing box; shrinking does not).
        a, b = Box(0, 0, 1, 1), Box(2, 0, 1, 1)
        g = diou_grad(a, b)
        step = 1e-6
        one_sided = (diou(Box(0, 0, 1, 1 + step), b) - diou(a, b)) / step
        assert g[3] == pytest.approx(one_sided, abs=1e-4)

    def test_iou_grad_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = Box(*rng.uniform(0.0, 0.5, 2), *rng.uniform(0.3, 0.9, 2))
            b = Box(*rng.uniform(0.0, 0.5, 2), *rng.uniform(0.3, 0.9, 2))
            if iou(a, b) == 0.0:
                continue
            g = iou_grad(a, b)
            fd = finite_diff(lambda bx: iou(bx, b), a)
            for gi, fi in zip(g, fd):
                assert abs(gi - fi) / max(abs(fi), 1e-6) < 1e-3


class TestAspectRatioFeature:
    @pytest.mark.parametrize("w,h,expected", [
        (100, 100, 0.0),
        (200, 100, 0.25),
        (1000, 10, 0.9801),
    ])
    def test_values(self, w, h, expected):
        assert aspect_ratio_feature(w, h) == pytest.approx(expected, abs=1e-12)

    def test_symmetric(self):
        assert aspect_ratio_feature(30, 70) == aspect_ratio_feature(70, 30)

    def test_rejects_nonpositive(self):
        with pytest.raises(InputError):
            aspect_ratio_feature(0, 10)


class TestAnchorGrid:
    def test_full_scale_count(self):
        assert len(build_anchor_grid([(32, 32), (16, 16)])) == 1280

    def test_single_cell(self):
        g = build_anchor_grid([(1, 1)])
        assert len(g) == 1
        assert (g.anchors[0].center_x, g.anchors[0].center_y) == (0.5, 0.5)

    def test_two_by_two_centers(self):
        g = build_anchor_grid([(2, 2)])
        centers = {(a.center_x, a.center_y) for a in g.anchors}
        assert centers == {(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)}

    def test_rejects_empty(self):
        with pytest.raises(InputError):
            build_anchor_grid([])


class TestAssignPositives:
    def test_unit_box(self):
        g = build_anchor_grid([(1, 1)])
        assert assign_positives(g, Box(0, 0, 1, 1)) == [True]

    def test_quadrant(self):
        g = build_anchor_grid([(2, 2)])
        mask = assign_positives(g, Box(0, 0, 0.5, 0.5))
        assert mask == [True, False, False, False]

    def test_tiny_box_all_false(self):
        g = build_anchor_grid([(2, 2)])
        assert not any(assign_positives(g, Box(0.4, 0.4, 0.01, 0.01)))

    @given(boxes)
    @settings(max_examples=50, deadline=None)
    def test_matches_brute_force(self, gt):
        g = build_anchor_grid([(4, 4), (2, 2)])
        mask = assign_positives(g, gt)
        brute = [gt.x <= a.center_x < gt.x + gt.w and gt.y <= a.center_y < gt.y + gt.h
                 for a in g.anchors]
        assert mask == brute


class TestTargetCodec:
    def test_centered_target(self):
        g = build_anchor_grid([(2, 2)])
        anchor = g.anchors[0]  # center (0.25, 0.25)... pick correct anchor
        gt = Box(0.25, 0.25, 0.5, 0.5)  # center (0.5, 0.5)
        g1 = build_anchor_grid([(1, 1)])
        t = encode_target(g1.anchors[0], g1, gt)
        assert (t.dx, t.dy) == (0.0, 0.0)
        assert t.sw == pytest.approx(math.log(0.5))
        assert t.sh == pytest.approx(math.log(0.5))

    def test_full_host_identity(self):
        g = build_anchor_grid([(1, 1)])
        t = encode_target(g.anchors[0], g, Box(0, 0, 1, 1))
        assert (t.dx, t.dy, t.sw, t.sh) == (0.0, 0.0, 0.0, 0.0)

    @given(boxes)
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, gt):
        g = build_anchor_grid([(8, 8), (4, 4)])
        for anchor, pos in zip(g.anchors, assign_positives(g, gt)):
            if not pos:
                continue
            back = decode_placement(anchor, g, encode_target(anchor, g, gt))
            assert back.x == pytest.approx(gt.x, abs=1e-9)
            assert back.y == pytest.approx(gt.y, abs=1e-9)
            assert back.w == pytest.approx(gt.w, abs=1e-9)
            assert back.h == pytest.approx(gt.h, abs=1e-9)

    def test_decode_clamps_degenerate_scale(self):
        g = build_anchor_grid([(1, 1)])
        from placekit.geometry import RegressionTarget
        box = decode_placement(g.anchors[0], g, RegressionTarget(0, 0, -50, -50))
        assert box.w == 1e-4 and box.h == 1e-4

    def test_box_validation(self):
        with pytest.raises(InputError):
            Box(0, 0, -1, 1)
        with pytest.raises(InputError):
            Box(float("nan"), 0, 1, 1)
