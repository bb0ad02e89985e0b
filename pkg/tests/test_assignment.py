"""Delta codec and proposal labeling tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualdet import (
    BACKGROUND,
    Box,
    ClassPartition,
    LabeledProposal,
    ObjectInstance,
    Scene,
    assign,
    decode_deltas,
    encode_deltas,
    iou,
)
from dualdet.assignment import decode_deltas_batch, encode_deltas_batch

from reference import ref_encode

PARTITION = ClassPartition(head_classes=frozenset({0}), tail_classes=frozenset({1}))


def _box_strategy():
    coord = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)
    side = st.floats(min_value=0.1, max_value=40.0, allow_nan=False)
    return st.builds(
        lambda x, y, w, h: Box(x, y, x + w, y + h), coord, coord, side, side
    )


def _obj(box: Box, class_id: int) -> ObjectInstance:
    return ObjectInstance(box=box, class_id=class_id, feature=np.zeros(3))


def _props(*boxes: Box):
    return [(b, np.zeros(3)) for b in boxes]


class TestDeltaCodec:
    def test_identity_encoding_is_zero(self):
        box = Box(3.0, 4.0, 10.0, 12.0)
        np.testing.assert_allclose(encode_deltas(box, box), np.zeros(4), atol=1e-12)

    def test_hand_values(self):
        prop = Box(0.0, 0.0, 10.0, 10.0)
        gt = Box(5.0, 5.0, 15.0, 15.0)
        np.testing.assert_allclose(encode_deltas(prop, gt), [0.5, 0.5, 0.0, 0.0])

    def test_against_reference(self):
        prop = Box(2.0, 3.0, 8.0, 11.0)
        gt = Box(1.0, 5.0, 13.0, 9.0)
        expected = ref_encode((2.0, 3.0, 8.0, 11.0), (1.0, 5.0, 13.0, 9.0))
        np.testing.assert_allclose(encode_deltas(prop, gt), expected, rtol=1e-12)

    @given(prop=_box_strategy(), gt=_box_strategy())
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, prop, gt):
        recovered = decode_deltas(prop, encode_deltas(prop, gt))
        np.testing.assert_allclose(recovered.as_array(), gt.as_array(), atol=1e-9)

    def test_zero_size_proposal_rejected(self):
        flat = Box(0.0, 0.0, 10.0, 0.0)
        gt = Box(0.0, 0.0, 5.0, 5.0)
        with pytest.raises(ValueError):
            encode_deltas(flat, gt)
        with pytest.raises(ValueError):
            decode_deltas(flat, np.zeros(4))

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(7)
        props = [
            Box(x, y, x + w, y + h)
            for x, y, w, h in zip(
                rng.uniform(0, 50, 20),
                rng.uniform(0, 50, 20),
                rng.uniform(1, 20, 20),
                rng.uniform(1, 20, 20),
            )
        ]
        gts = [
            Box(x, y, x + w, y + h)
            for x, y, w, h in zip(
                rng.uniform(0, 50, 20),
                rng.uniform(0, 50, 20),
                rng.uniform(1, 20, 20),
                rng.uniform(1, 20, 20),
            )
        ]
        prop_arr = np.array([b.as_array() for b in props])
        gt_arr = np.array([b.as_array() for b in gts])
        batch = encode_deltas_batch(prop_arr, gt_arr)
        for i, (p, g) in enumerate(zip(props, gts)):
            np.testing.assert_allclose(batch[i], encode_deltas(p, g), rtol=1e-12)
        decoded = decode_deltas_batch(prop_arr, batch)
        for i, p in enumerate(props):
            np.testing.assert_allclose(
                decoded[i], decode_deltas(p, batch[i]).as_array(), rtol=1e-12
            )

    def test_batch_rejects_zero_size_rows(self):
        props = np.array([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 0.0, 10.0]])
        gts = np.array([[0.0, 0.0, 5.0, 5.0], [0.0, 0.0, 5.0, 5.0]])
        with pytest.raises(ValueError):
            encode_deltas_batch(props, gts)
        with pytest.raises(ValueError):
            decode_deltas_batch(props, np.zeros((2, 4)))


class TestAssign:
    def test_exact_overlap_is_foreground(self):
        gt = Box(10.0, 10.0, 20.0, 20.0)
        scene = Scene(scene_id=0, objects=(_obj(gt, 1),))
        part = assign(_props(gt), scene, PARTITION)
        assert len(part.s_t) == 1 and not part.s_h and not part.s_b
        labeled = part.s_t[0]
        assert labeled.label == 1
        assert labeled.matched_gt == 0
        assert labeled.max_iou == pytest.approx(1.0)
        np.testing.assert_allclose(labeled.regression_target, np.zeros(4), atol=1e-12)

    def test_pools_route_by_group(self):
        head_box = Box(0.0, 0.0, 10.0, 10.0)
        tail_box = Box(50.0, 50.0, 60.0, 60.0)
        scene = Scene(scene_id=0, objects=(_obj(head_box, 0), _obj(tail_box, 1)))
        part = assign(_props(head_box, tail_box), scene, PARTITION)
        assert [p.label for p in part.s_h] == [0]
        assert [p.label for p in part.s_t] == [1]

    def test_low_iou_is_background(self):
        gt = Box(0.0, 0.0, 10.0, 10.0)
        far = Box(100.0, 100.0, 110.0, 110.0)
        scene = Scene(scene_id=0, objects=(_obj(gt, 0),))
        part = assign(_props(far), scene, PARTITION)
        assert len(part.s_b) == 1
        assert part.s_b[0].label == BACKGROUND
        assert part.s_b[0].max_iou == pytest.approx(0.0)

    def test_dead_zone_drops_proposal(self):
        gt = Box(0.0, 0.0, 10.0, 10.0)
        # Half-overlap box: IoU = 50/150 = 1/3, inside [0.3, 0.5).
        mid = Box(5.0, 0.0, 15.0, 10.0)
        assert 0.3 <= iou(mid, gt) < 0.5
        scene = Scene(scene_id=0, objects=(_obj(gt, 0),))
        part = assign(_props(mid), scene, PARTITION, pos_thr=0.5, neg_thr=0.3)
        assert not part.s_t and not part.s_h and not part.s_b

    def test_equal_thresholds_leave_no_dead_zone(self):
        gt = Box(0.0, 0.0, 10.0, 10.0)
        mid = Box(5.0, 0.0, 15.0, 10.0)
        scene = Scene(scene_id=0, objects=(_obj(gt, 0),))
        part = assign(_props(mid), scene, PARTITION, pos_thr=0.5, neg_thr=0.5)
        assert len(part.s_b) == 1

    def test_iou_tie_prefers_lower_gt_index(self):
        gt = Box(0.0, 0.0, 10.0, 10.0)
        scene = Scene(scene_id=0, objects=(_obj(gt, 0), _obj(gt, 1)))
        part = assign(_props(gt), scene, PARTITION)
        labeled = (part.s_t + part.s_h)[0]
        assert labeled.matched_gt == 0
        assert labeled.label == 0

    def test_empty_scene_all_background(self):
        scene = Scene(scene_id=0, objects=())
        part = assign(_props(Box(0, 0, 5, 5), Box(9, 9, 12, 12)), scene, PARTITION)
        assert not part.s_t and not part.s_h
        assert len(part.s_b) == 2
        assert all(p.max_iou == 0.0 for p in part.s_b)

    def test_empty_proposals(self):
        scene = Scene(scene_id=0, objects=(_obj(Box(0, 0, 5, 5), 0),))
        part = assign([], scene, PARTITION)
        assert part == (part.__class__((), (), ()))

    def test_unknown_class_rejected(self):
        gt = Box(0.0, 0.0, 10.0, 10.0)
        scene = Scene(scene_id=0, objects=(_obj(gt, 7),))
        with pytest.raises(ValueError, match="missing from partition"):
            assign(_props(gt), scene, PARTITION)

    def test_invalid_thresholds_rejected(self):
        scene = Scene(scene_id=0, objects=())
        with pytest.raises(ValueError):
            assign([], scene, PARTITION, pos_thr=0.4, neg_thr=0.5)

    def test_regression_target_decodes_to_matched_gt(self):
        gt = Box(10.0, 10.0, 22.0, 26.0)
        near = Box(11.0, 9.0, 23.0, 24.0)
        scene = Scene(scene_id=0, objects=(_obj(gt, 1),))
        part = assign(_props(near), scene, PARTITION)
        labeled = part.s_t[0]
        recovered = decode_deltas(near, labeled.regression_target)
        np.testing.assert_allclose(recovered.as_array(), gt.as_array(), atol=1e-9)

    def test_labeled_proposal_invariant(self):
        with pytest.raises(ValueError):
            LabeledProposal(Box(0, 0, 1, 1), np.zeros(3), label=2, max_iou=0.9)
        with pytest.raises(ValueError):
            LabeledProposal(
                Box(0, 0, 1, 1),
                np.zeros(3),
                label=BACKGROUND,
                max_iou=0.1,
                matched_gt=0,
                regression_target=np.zeros(4),
            )
