"""Axis-aligned box arithmetic, IoU, and greedy non-maximum suppression.

Everything here is pure and operates on immutable values, so it is safe to
call concurrently from anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Source tags carried by detections so downstream code can tell which head
# produced them.
SOURCE_TAIL = "tail"
SOURCE_HEAD = "head"
SOURCE_SINGLE = "single"


def cascade_source(stage: int) -> str:
    """Source tag for a detection whose box came from cascade stage `stage` (1-based)."""
    return f"cascade{stage}"


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with x1 <= x2 and y1 <= y2 (zero area allowed)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(f"invalid box extents: {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)


@dataclass(frozen=True)
class ScoredDetection:
    """A class-labeled box with a confidence score and an origin tag."""

    box: Box
    class_id: int
    score: float
    source_head: str

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score outside [0, 1]: {self.score}")
        if self.class_id < 0:
            raise ValueError(f"negative class id: {self.class_id}")


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0.0 when the union has zero area."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        inter = 0.0
    else:
        inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for (N, 4) and (M, 4) arrays of [x1, y1, x2, y2] rows.

    Zero-area unions map to IoU 0, matching `iou`.
    """
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    ix = np.minimum(boxes_a[:, None, 2], boxes_b[None, :, 2]) - np.maximum(
        boxes_a[:, None, 0], boxes_b[None, :, 0]
    )
    iy = np.minimum(boxes_a[:, None, 3], boxes_b[None, :, 3]) - np.maximum(
        boxes_a[:, None, 1], boxes_b[None, :, 1]
    )
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def nms(
    dets: list[ScoredDetection],
    iou_threshold: float,
    class_agnostic: bool = False,
) -> list[ScoredDetection]:
    """Greedy class-wise non-maximum suppression.

    Detections are visited in score-descending order (ties broken by input
    position); one is kept iff its IoU with every already-kept detection of
    the same class is <= iou_threshold. Suppression never crosses class
    boundaries unless class_agnostic is set, in which case all detections
    compete in one group. The result is sorted by descending score.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold outside [0, 1]: {iou_threshold}")
    if not dets:
        return []
    by_class: dict[int, list[int]] = {}
    for i, det in enumerate(dets):
        by_class.setdefault(0 if class_agnostic else det.class_id, []).append(i)
    keep: list[int] = []
    for idxs in by_class.values():
        order = sorted(idxs, key=lambda i: (-dets[i].score, i))
        boxes = np.array([dets[i].box.as_array() for i in order])
        overlaps = iou_matrix(boxes, boxes)
        suppressed = np.zeros(len(order), dtype=bool)
        for pos in range(len(order)):
            if suppressed[pos]:
                continue
            keep.append(order[pos])
            suppressed |= overlaps[pos] > iou_threshold
    keep.sort(key=lambda i: (-dets[i].score, i))
    return [dets[i] for i in keep]
