import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualdet.geometry import Box, ScoredDetection, iou, iou_matrix, nms

from reference import ref_iou, ref_nms, ref_nms_agnostic


def boxes_strategy(max_coord=100.0):
    coord = st.floats(0.0, max_coord, allow_nan=False, allow_infinity=False)
    side = st.floats(0.1, 40.0, allow_nan=False, allow_infinity=False)
    return st.builds(lambda x, y, w, h: Box(x, y, x + w, y + h), coord, coord, side, side)


class TestBox:
    def test_accessors(self):
        b = Box(1.0, 2.0, 4.0, 8.0)
        assert b.width == 3.0
        assert b.height == 6.0
        assert b.area == 18.0
        assert np.array_equal(b.as_array(), [1.0, 2.0, 4.0, 8.0])

    def test_rejects_inverted_corners(self):
        with pytest.raises(ValueError):
            Box(2.0, 0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            Box(0.0, 2.0, 1.0, 1.0)

    def test_zero_area_allowed(self):
        assert Box(1.0, 1.0, 1.0, 5.0).area == 0.0


class TestScoredDetection:
    def test_score_range_enforced(self):
        b = Box(0, 0, 1, 1)
        with pytest.raises(ValueError):
            ScoredDetection(b, 0, 1.5, "single")
        with pytest.raises(ValueError):
            ScoredDetection(b, 0, -0.1, "single")


class TestIou:
    def test_identical_boxes(self):
        b = Box(0, 0, 10, 10)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0

    def test_known_overlap(self):
        # 5x10 intersection over 100 + 100 - 50
        a = Box(0, 0, 10, 10)
        b = Box(5, 0, 15, 10)
        assert iou(a, b) == pytest.approx(50.0 / 150.0)

    def test_touching_edges_is_zero(self):
        assert iou(Box(0, 0, 1, 1), Box(1, 0, 2, 1)) == 0.0

    def test_degenerate_box(self):
        assert iou(Box(0, 0, 0, 0), Box(0, 0, 0, 0)) == 0.0

    @given(boxes_strategy(), boxes_strategy())
    def test_matches_reference(self, a, b):
        assert iou(a, b) == pytest.approx(ref_iou(tuple(a.as_array()), tuple(b.as_array())), abs=1e-12)

    @given(boxes_strategy(), boxes_strategy())
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)


class TestIouMatrix:
    @given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_matches_scalar(self, n, m, seed):
        rng = np.random.default_rng(seed)
        a = [Box(x, y, x + w, y + h) for x, y, w, h in rng.uniform(0.1, 20, (n, 4))]
        b = [Box(x, y, x + w, y + h) for x, y, w, h in rng.uniform(0.1, 20, (m, 4))]
        mat = iou_matrix(
            np.array([bb.as_array() for bb in a]).reshape(n, 4),
            np.array([bb.as_array() for bb in b]).reshape(m, 4),
        )
        assert mat.shape == (n, m)
        for i in range(n):
            for j in range(m):
                assert mat[i, j] == pytest.approx(iou(a[i], b[j]), abs=1e-12)


def _random_dets(rng, n, num_classes=3, max_coord=12.0):
    dets = []
    for _ in range(n):
        x, y = rng.uniform(0, max_coord, 2)
        w, h = rng.uniform(0.5, 6.0, 2)
        dets.append(
            ScoredDetection(
                Box(x, y, x + w, y + h),
                int(rng.integers(num_classes)),
                float(rng.uniform(0, 1)),
                "single",
            )
        )
    return dets


class TestNms:
    def test_empty(self):
        assert nms([], 0.5) == []

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            nms([], 1.5)

    def test_keeps_highest_of_overlapping_pair(self):
        a = ScoredDetection(Box(0, 0, 10, 10), 0, 0.9, "single")
        b = ScoredDetection(Box(1, 1, 11, 11), 0, 0.8, "single")
        assert nms([a, b], 0.5) == [a]

    def test_classes_never_interact(self):
        a = ScoredDetection(Box(0, 0, 10, 10), 0, 0.9, "single")
        b = ScoredDetection(Box(0, 0, 10, 10), 1, 0.8, "single")
        assert nms([a, b], 0.5) == [a, b]

    def test_class_agnostic_merges_classes(self):
        a = ScoredDetection(Box(0, 0, 10, 10), 0, 0.9, "single")
        b = ScoredDetection(Box(0, 0, 10, 10), 1, 0.8, "single")
        assert nms([a, b], 0.5, class_agnostic=True) == [a]

    def test_boundary_iou_not_suppressed(self):
        # IoU exactly at the threshold survives; suppression needs strict excess
        a = ScoredDetection(Box(0, 0, 10, 10), 0, 0.9, "single")
        b = ScoredDetection(Box(5, 0, 15, 10), 0, 0.8, "single")
        thr = iou(a.box, b.box)
        assert nms([a, b], thr) == [a, b]

    def test_score_tie_broken_by_input_order(self):
        a = ScoredDetection(Box(0, 0, 10, 10), 0, 0.5, "single")
        b = ScoredDetection(Box(1, 1, 11, 11), 0, 0.5, "single")
        assert nms([a, b], 0.3) == [a]
        assert nms([b, a], 0.3) == [b]

    @given(st.integers(0, 2**32 - 1), st.integers(0, 12))
    @settings(max_examples=120)
    def test_matches_bruteforce(self, seed, n):
        rng = np.random.default_rng(seed)
        dets = _random_dets(rng, n)
        items = [(tuple(d.box.as_array()), d.score, d.class_id) for d in dets]
        for thr in (0.1, 0.5, 0.9):
            assert nms(dets, thr) == [dets[i] for i in ref_nms(items, thr)]

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60)
    def test_agnostic_matches_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        dets = _random_dets(rng, 8)
        items = [(tuple(d.box.as_array()), d.score, d.class_id) for d in dets]
        got = nms(dets, 0.5, class_agnostic=True)
        assert got == [dets[i] for i in ref_nms_agnostic(items, 0.5)]

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60)
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        kept = nms(_random_dets(rng, 10), 0.5)
        assert nms(kept, 0.5) == kept

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60)
    def test_output_sorted_by_score(self, seed):
        rng = np.random.default_rng(seed)
        kept = nms(_random_dets(rng, 10), 0.4)
        scores = [d.score for d in kept]
        assert scores == sorted(scores, reverse=True)
