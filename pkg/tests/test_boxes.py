import numpy as np
import pytest
from hypothesis import given, strategies as st

from openvocab.boxes import Box, giou, giou_with_grad, iou, l1_distance, l1_grad


def box_strategy():
    coords = st.tuples(
        st.floats(0.0, 0.9), st.floats(0.0, 0.9), st.floats(0.05, 1.0), st.floats(0.05, 1.0)
    )
    return coords.map(
        lambda t: Box(t[0], t[1], min(t[0] + t[2], 1.0), min(t[1] + t[3], 1.0))
    )


class TestIou:
    def test_identical(self):
        b = Box(0.1, 0.1, 0.5, 0.6)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 0.2, 0.2), Box(0.5, 0.5, 0.9, 0.9)) == 0.0

    def test_known_overlap(self):
        # intersection 0.01, union 0.07
        assert iou(Box(0, 0, 0.2, 0.2), Box(0.1, 0.1, 0.3, 0.3)) == pytest.approx(1 / 7)

    def test_zero_area_union(self):
        b = Box(0.3, 0.3, 0.3, 0.3)
        assert iou(b, b) == 0.0

    @given(box_strategy(), box_strategy())
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0


class TestGiou:
    def test_equal_boxes(self):
        b = Box(0.2, 0.2, 0.6, 0.7)
        assert giou(b, b) == pytest.approx(1.0)

    def test_corner_boxes(self):
        # hull area 1.0, union 0.02, no intersection
        v = giou(Box(0, 0, 0.1, 0.1), Box(0.9, 0.9, 1, 1))
        assert v == pytest.approx(-0.98)

    def test_nested_equals_iou(self):
        outer = Box(0.1, 0.1, 0.9, 0.9)
        inner = Box(0.3, 0.3, 0.5, 0.5)
        assert giou(outer, inner) == pytest.approx(iou(outer, inner))

    @given(box_strategy(), box_strategy())
    def test_at_most_iou(self, a, b):
        assert giou(a, b) <= iou(a, b) + 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_grad_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        a = np.sort(rng.uniform(0.0, 1.0, 4).reshape(2, 2), axis=1).T.reshape(-1)
        a = np.array([a[0], a[2], a[1], a[3]])  # x1 y1 x2 y2
        b = np.sort(rng.uniform(0.0, 1.0, 4).reshape(2, 2), axis=1).T.reshape(-1)
        b = np.array([b[0], b[2], b[1], b[3]])
        _, grad = giou_with_grad(a, b)
        h = 1e-6
        for i in range(4):
            hi, lo = a.copy(), a.copy()
            hi[i] += h
            lo[i] -= h
            numeric = (giou(hi, b) - giou(lo, b)) / (2 * h)
            assert grad[i] == pytest.approx(numeric, rel=1e-5, abs=1e-6)


class TestL1:
    def test_distance_and_grad(self):
        a, b = Box(0, 0, 0.2, 0.2), Box(0, 0, 0.4, 0.4)
        assert l1_distance(a, b) == pytest.approx(0.4)
        np.testing.assert_array_equal(l1_grad(a, b), [0, 0, -1, -1])


class TestBoxType:
    def test_rejects_inverted(self):
        with pytest.raises(ValueError):
            Box(0.5, 0.1, 0.2, 0.3)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Box(-0.1, 0.0, 0.5, 0.5)

    def test_roundtrip(self):
        b = Box(0.1, 0.2, 0.3, 0.4)
        assert Box.from_array(b.to_array()) == b
        assert b.area == pytest.approx(0.04)
