"""IoU-based proposal labeling and box delta encoding.

Proposals are matched to the ground-truth object of maximal IoU, labeled
foreground or background by threshold, and routed into the three pools the
samplers draw from: tail-class positives, head-class positives, background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, iou_matrix
from .scenes import ClassPartition, Scene

BACKGROUND = -1


@dataclass(frozen=True)
class LabeledProposal:
    """A proposal after assignment.

    label is a foreground class id or BACKGROUND; matched_gt and
    regression_target are present iff the proposal is foreground.
    """

    box: Box
    feature: np.ndarray
    label: int
    max_iou: float
    matched_gt: int | None = None
    regression_target: np.ndarray | None = None

    def __post_init__(self):
        fg = self.label != BACKGROUND
        if fg != (self.matched_gt is not None) or fg != (self.regression_target is not None):
            raise ValueError("foreground label requires matched_gt and regression_target")


@dataclass(frozen=True)
class ProposalPartition:
    """The three disjoint pools consumed by the samplers."""

    s_t: tuple[LabeledProposal, ...]
    s_h: tuple[LabeledProposal, ...]
    s_b: tuple[LabeledProposal, ...]


def encode_deltas(proposal: Box, gt: Box) -> np.ndarray:
    """Center/log-size offsets that map `proposal` onto `gt`.

    dx = (gx - px) / pw, dy = (gy - py) / ph, dw = log(gw / pw),
    dh = log(gh / ph). Requires a proposal with nonzero width and height.
    """
    pw, ph = proposal.width, proposal.height
    if pw <= 0.0 or ph <= 0.0:
        raise ValueError("cannot encode against a zero-size proposal")
    px = proposal.x1 + 0.5 * pw
    py = proposal.y1 + 0.5 * ph
    gw, gh = gt.width, gt.height
    gx = gt.x1 + 0.5 * gw
    gy = gt.y1 + 0.5 * gh
    return np.array(
        [(gx - px) / pw, (gy - py) / ph, np.log(gw / pw), np.log(gh / ph)],
        dtype=np.float64,
    )


def decode_deltas(proposal: Box, deltas: np.ndarray) -> Box:
    """Exact inverse of encode_deltas."""
    pw, ph = proposal.width, proposal.height
    if pw <= 0.0 or ph <= 0.0:
        raise ValueError("cannot decode from a zero-size proposal")
    px = proposal.x1 + 0.5 * pw
    py = proposal.y1 + 0.5 * ph
    dx, dy, dw, dh = np.asarray(deltas, dtype=np.float64)
    gx = px + dx * pw
    gy = py + dy * ph
    gw = pw * np.exp(dw)
    gh = ph * np.exp(dh)
    return Box(gx - 0.5 * gw, gy - 0.5 * gh, gx + 0.5 * gw, gy + 0.5 * gh)


def encode_deltas_batch(prop_boxes: np.ndarray, gt_boxes: np.ndarray) -> np.ndarray:
    """encode_deltas over matching rows of two (N, 4) corner arrays."""
    pw = prop_boxes[:, 2] - prop_boxes[:, 0]
    ph = prop_boxes[:, 3] - prop_boxes[:, 1]
    if np.any(pw <= 0.0) or np.any(ph <= 0.0):
        raise ValueError("cannot encode against a zero-size proposal")
    px = prop_boxes[:, 0] + 0.5 * pw
    py = prop_boxes[:, 1] + 0.5 * ph
    gw = gt_boxes[:, 2] - gt_boxes[:, 0]
    gh = gt_boxes[:, 3] - gt_boxes[:, 1]
    gx = gt_boxes[:, 0] + 0.5 * gw
    gy = gt_boxes[:, 1] + 0.5 * gh
    return np.stack(
        [(gx - px) / pw, (gy - py) / ph, np.log(gw / pw), np.log(gh / ph)], axis=1
    )


def decode_deltas_batch(prop_boxes: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """decode_deltas over matching rows; returns (N, 4) corners."""
    pw = prop_boxes[:, 2] - prop_boxes[:, 0]
    ph = prop_boxes[:, 3] - prop_boxes[:, 1]
    if np.any(pw <= 0.0) or np.any(ph <= 0.0):
        raise ValueError("cannot decode from a zero-size proposal")
    px = prop_boxes[:, 0] + 0.5 * pw
    py = prop_boxes[:, 1] + 0.5 * ph
    gx = px + deltas[:, 0] * pw
    gy = py + deltas[:, 1] * ph
    gw = pw * np.exp(deltas[:, 2])
    gh = ph * np.exp(deltas[:, 3])
    return np.stack([gx - 0.5 * gw, gy - 0.5 * gh, gx + 0.5 * gw, gy + 0.5 * gh], axis=1)


def assign(
    proposals: list[tuple[Box, np.ndarray]],
    scene: Scene,
    partition: ClassPartition,
    pos_thr: float = 0.5,
    neg_thr: float = 0.5,
) -> ProposalPartition:
    """Label proposals against the scene and split them into the three pools.

    max_iou >= pos_thr: foreground with the matched object's class (IoU ties
    broken by lower object index). max_iou < neg_thr: background. Proposals
    in [neg_thr, pos_thr) are discarded. An empty scene makes everything
    background.
    """
    if not 0.0 <= neg_thr <= pos_thr <= 1.0:
        raise ValueError("need 0 <= neg_thr <= pos_thr <= 1")
    s_t: list[LabeledProposal] = []
    s_h: list[LabeledProposal] = []
    s_b: list[LabeledProposal] = []
    if not proposals:
        return ProposalPartition((), (), ())
    if not scene.objects:
        for box, feature in proposals:
            s_b.append(LabeledProposal(box, feature, BACKGROUND, 0.0))
        return ProposalPartition((), (), tuple(s_b))
    prop_boxes = np.array([box.as_array() for box, _ in proposals])
    gt_boxes = np.array([obj.box.as_array() for obj in scene.objects])
    overlaps = iou_matrix(prop_boxes, gt_boxes)
    best_gt = overlaps.argmax(axis=1)  # argmax picks the lowest index on ties
    best_iou = overlaps[np.arange(len(proposals)), best_gt]
    fg = best_iou >= pos_thr
    targets = np.zeros((len(proposals), 4))
    if fg.any():
        targets[fg] = encode_deltas_batch(prop_boxes[fg], gt_boxes[best_gt[fg]])
    for i, (box, feature) in enumerate(proposals):
        miou = float(best_iou[i])
        if fg[i]:
            gt_index = int(best_gt[i])
            obj = scene.objects[gt_index]
            labeled = LabeledProposal(
                box=box,
                feature=feature,
                label=obj.class_id,
                max_iou=miou,
                matched_gt=gt_index,
                regression_target=targets[i],
            )
            if obj.class_id in partition.tail_classes:
                s_t.append(labeled)
            elif obj.class_id in partition.head_classes:
                s_h.append(labeled)
            else:
                raise ValueError(f"class {obj.class_id} missing from partition")
        elif miou < neg_thr:
            s_b.append(LabeledProposal(box, feature, BACKGROUND, miou))
        # dead zone [neg_thr, pos_thr): dropped
    return ProposalPartition(tuple(s_t), tuple(s_h), tuple(s_b))
