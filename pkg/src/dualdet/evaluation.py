"""COCO-style detection evaluation.

Per class and IoU threshold, detections are greedily matched to ground truth
in score order (each ground truth claimable once), the precision-recall curve
is built from cumulative true/false positives, its envelope is made monotone,
and AP is the 101-point interpolated mean. Summary metrics average per-class
AP over the ten thresholds 0.50:0.05:0.95, at 0.50 only, at 0.75 only, and
within the head/tail class groups. Classes with no ground truth in the
evaluated scenes are excluded from every mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, ScoredDetection, iou_matrix
from .scenes import ClassPartition, Scene

EVAL_IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
# k/100 exactly; linspace drifts by 1 ulp on some points, which matters when
# a recall value ties a grid point (e.g. 7 of 10 objects found).
RECALL_POINTS = np.arange(101) / 100.0


def _greedy_flags(ious: np.ndarray, iou_thr: float) -> list[bool]:
    """Greedy matching given a (detections x ground truths) IoU matrix whose
    rows are already in descending-score order. Each ground truth is consumed
    by at most one detection; IoU ties go to the lowest ground-truth index."""
    num_gt = ious.shape[1]
    if num_gt == 0:
        return [False] * len(ious)
    available = np.ones(num_gt, dtype=bool)
    remaining = num_gt
    row_max = ious.max(axis=1) if len(ious) else None
    flags: list[bool] = []
    for k, row in enumerate(ious):
        # cheap reject: even the best overall IoU misses the threshold
        if remaining == 0 or row_max[k] < iou_thr:
            flags.append(False)
            continue
        masked = np.where(available, row, -1.0)
        j = int(masked.argmax())
        if masked[j] >= iou_thr:
            available[j] = False
            remaining -= 1
            flags.append(True)
        else:
            flags.append(False)
    return flags


def match_detections(
    dets: list[ScoredDetection],
    scene: Scene,
    iou_thr: float,
) -> list[tuple[ScoredDetection, bool]]:
    """Flag each detection TP or FP against one scene at one IoU threshold.

    Detections are taken in descending score order (ties by input position).
    A detection is a TP when its best IoU over still-unmatched same-class
    ground truths reaches the threshold; that ground truth is then consumed.
    Ties on IoU go to the lowest ground-truth index.
    """
    if not 0.0 < iou_thr <= 1.0:
        raise ValueError(f"iou_thr outside (0, 1]: {iou_thr}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    flag_by_index: dict[int, bool] = {}
    for c in sorted({dets[i].class_id for i in order}):
        rows = [i for i in order if dets[i].class_id == c]
        gt_boxes = np.array(
            [o.box.as_array() for o in scene.objects if o.class_id == c]
        ).reshape(-1, 4)
        det_boxes = np.array([dets[i].box.as_array() for i in rows])
        flags = _greedy_flags(iou_matrix(det_boxes, gt_boxes), iou_thr)
        flag_by_index.update(zip(rows, flags))
    return [(dets[i], flag_by_index[i]) for i in order]


def average_precision(flags: list[bool], num_gt: int) -> float:
    """101-point interpolated AP from score-ordered TP/FP flags."""
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    if num_gt == 0:
        return 0.0
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=np.float64))
    recalls = tp / num_gt
    precisions = tp / (tp + fp)
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    # first detection index reaching each recall point; beyond max recall -> 0
    idx = np.searchsorted(recalls, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


@dataclass(frozen=True)
class EvalReport:
    ap_per_class_per_iou: np.ndarray  # (num_classes, num_thresholds)
    num_gt_per_class: np.ndarray  # (num_classes,)
    head_classes: tuple[int, ...]
    tail_classes: tuple[int, ...]

    @property
    def valid_classes(self) -> np.ndarray:
        return self.num_gt_per_class > 0

    @property
    def per_class_ap(self) -> np.ndarray:
        return self.ap_per_class_per_iou.mean(axis=1)

    def _mean_over(self, class_ids: np.ndarray, column: int | None = None) -> float:
        mask = np.zeros(len(self.num_gt_per_class), dtype=bool)
        mask[class_ids] = True
        mask &= self.valid_classes
        if not mask.any():
            return 0.0
        values = self.per_class_ap if column is None else self.ap_per_class_per_iou[:, column]
        return float(values[mask].mean())

    @property
    def ap(self) -> float:
        return self._mean_over(np.arange(len(self.num_gt_per_class)))

    @property
    def ap50(self) -> float:
        return self._mean_over(np.arange(len(self.num_gt_per_class)), column=0)

    @property
    def ap75(self) -> float:
        return self._mean_over(np.arange(len(self.num_gt_per_class)), column=5)

    @property
    def head_group_ap(self) -> float:
        return self._mean_over(np.array(sorted(self.head_classes), dtype=np.intp))

    @property
    def tail_group_ap(self) -> float:
        return self._mean_over(np.array(sorted(self.tail_classes), dtype=np.intp))

    def metrics(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "head_group_ap": self.head_group_ap,
            "tail_group_ap": self.tail_group_ap,
            "per_class_ap": [float(v) for v in self.per_class_ap],
            "per_class_num_gt": [int(v) for v in self.num_gt_per_class],
        }


def evaluate(
    dets_by_scene: dict[int, list[ScoredDetection]],
    scenes: list[Scene],
    partition: ClassPartition,
) -> EvalReport:
    """Score detections against a scene list across all IoU thresholds."""
    by_id = {s.scene_id: s for s in scenes}
    unknown = sorted(set(dets_by_scene) - set(by_id))
    if unknown:
        raise ValueError(f"detections reference unknown scene ids: {unknown[:5]}")
    num_classes = partition.num_classes
    num_gt = np.zeros(num_classes, dtype=np.int64)
    for scene in scenes:
        for obj in scene.objects:
            num_gt[obj.class_id] += 1

    ap = np.zeros((num_classes, len(EVAL_IOU_THRESHOLDS)))
    scene_ids = sorted(by_id)
    for c in range(num_classes):
        if num_gt[c] == 0:
            continue
        # score-ordered detections and their IoU rows, precomputed per scene
        per_scene: list[tuple[list[float], np.ndarray]] = []
        for sid in scene_ids:
            dets = [d for d in dets_by_scene.get(sid, ()) if d.class_id == c]
            dets.sort(key=lambda d: -d.score)
            gt_boxes = np.array(
                [o.box.as_array() for o in by_id[sid].objects if o.class_id == c]
            ).reshape(-1, 4)
            det_boxes = np.array([d.box.as_array() for d in dets]).reshape(-1, 4)
            per_scene.append(([d.score for d in dets], iou_matrix(det_boxes, gt_boxes)))
        for t, thr in enumerate(EVAL_IOU_THRESHOLDS):
            records: list[tuple[float, bool]] = []
            for scores, ious in per_scene:
                records.extend(zip(scores, _greedy_flags(ious, thr)))
            records.sort(key=lambda r: -r[0])  # stable: scene order preserved on ties
            ap[c, t] = average_precision([flag for _, flag in records], int(num_gt[c]))
    return EvalReport(
        ap_per_class_per_iou=ap,
        num_gt_per_class=num_gt,
        head_classes=tuple(sorted(partition.head_classes)),
        tail_classes=tuple(sorted(partition.tail_classes)),
    )


def format_report_table(
    rows: list[tuple[str, EvalReport]],
    class_names: list[str] | None = None,
) -> str:
    """Delimiter-separated comparison table: AP, AP50, AP75, then per-class APs."""
    if not rows:
        return ""
    num_classes = len(rows[0][1].num_gt_per_class)
    names = class_names or [f"class{c}" for c in range(num_classes)]
    header = ["label", "AP", "AP50", "AP75", "head_AP", "tail_AP", *names]
    lines = ["\t".join(header)]
    for label, report in rows:
        cells = [
            label,
            f"{report.ap:.4f}",
            f"{report.ap50:.4f}",
            f"{report.ap75:.4f}",
            f"{report.head_group_ap:.4f}",
            f"{report.tail_group_ap:.4f}",
            *(f"{v:.4f}" for v in report.per_class_ap),
        ]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
