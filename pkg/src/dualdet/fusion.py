"""Inference-time prediction and fusion for every trained-head layout.

Candidates are emitted per proposal in ascending class order, thresholded on
score, deduplicated with class-wise NMS, and capped per scene. The dual path
masks each head to its own class group; the all-NMS path lets both heads
predict everything and relies on NMS to fuse; the cascade averages masked
scores across its stages and regresses the final box with the last stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    SOURCE_HEAD,
    SOURCE_SINGLE,
    SOURCE_TAIL,
    Box,
    ScoredDetection,
    cascade_source,
    nms,
)
from .heads import (
    HeadParams,
    TrainedModel,
    clipped_decode_boxes,
    forward_batch,
    refine_boxes,
)
from .scenes import ClassPartition

Proposal = tuple[Box, np.ndarray]


@dataclass(frozen=True)
class InferenceConfig:
    score_threshold: float = 0.05
    nms_iou: float = 0.5
    max_detections_per_scene: int = 500
    class_agnostic_nms: bool = False

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold outside [0, 1]")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError("nms_iou outside [0, 1]")
        if self.max_detections_per_scene < 1:
            raise ValueError("max_detections_per_scene must be >= 1")


def _finalize(cands: list[ScoredDetection], cfg: InferenceConfig) -> list[ScoredDetection]:
    kept = nms(cands, cfg.nms_iou, class_agnostic=cfg.class_agnostic_nms)
    return kept[: cfg.max_detections_per_scene]


def _head_mask(partition: ClassPartition) -> np.ndarray:
    return np.array([c in partition.head_classes for c in range(partition.num_classes)])


def _emit(
    prop_boxes: np.ndarray,
    scores: np.ndarray,
    deltas: np.ndarray,
    sources: list[str],
    cfg: InferenceConfig,
    extent: tuple[float, float] | None,
    class_of: list[int] | None = None,
) -> list[ScoredDetection]:
    """Candidates from per-(proposal, column) score/delta arrays.

    np.nonzero walks the mask row-major, so candidates come out per proposal
    in ascending column order; every downstream tie-break builds on that.
    Columns usually are class ids; class_of remaps them when a head spreads
    one class over several columns.
    """
    ii, cc = np.nonzero(scores >= cfg.score_threshold)
    if not len(ii):
        return []
    boxes = clipped_decode_boxes(prop_boxes[ii], deltas[ii, cc], extent)
    picked = scores[ii, cc]
    classes = list(range(scores.shape[1])) if class_of is None else class_of
    return [
        ScoredDetection(box, classes[c], float(s), sources[c])
        for box, c, s in zip(boxes, cc, picked)
    ]


def predict_single(
    params: HeadParams,
    proposals: list[Proposal],
    cfg: InferenceConfig,
    extent: tuple[float, float] | None = None,
    source: str = SOURCE_SINGLE,
) -> list[ScoredDetection]:
    """All foreground classes from one head."""
    if not proposals:
        return []
    x = np.array([f for _, f in proposals])
    prop_boxes = np.array([b.as_array() for b, _ in proposals])
    scores, deltas = forward_batch(params, x)
    cands = _emit(
        prop_boxes, scores[:, : params.num_classes], deltas,
        [source] * params.num_classes, cfg, extent,
    )
    return _finalize(cands, cfg)


def predict_dual(
    params_h: HeadParams,
    params_t: HeadParams,
    proposals: list[Proposal],
    partition: ClassPartition,
    cfg: InferenceConfig,
    extent: tuple[float, float] | None = None,
) -> list[ScoredDetection]:
    """Group-masked fusion: each head contributes only its own class group."""
    if not proposals:
        return []
    x = np.array([f for _, f in proposals])
    prop_boxes = np.array([b.as_array() for b, _ in proposals])
    scores_h, deltas_h = forward_batch(params_h, x)
    scores_t, deltas_t = forward_batch(params_t, x)
    mask = _head_mask(partition)
    n = partition.num_classes
    scores = np.where(mask[None, :], scores_h[:, :n], scores_t[:, :n])
    deltas = np.where(mask[None, :, None], deltas_h, deltas_t)
    sources = [SOURCE_HEAD if m else SOURCE_TAIL for m in mask]
    return _finalize(_emit(prop_boxes, scores, deltas, sources, cfg, extent), cfg)


def predict_all_nms(
    params_h: HeadParams,
    params_t: HeadParams,
    proposals: list[Proposal],
    partition: ClassPartition,
    cfg: InferenceConfig,
    extent: tuple[float, float] | None = None,
) -> list[ScoredDetection]:
    """Unmasked fusion: both heads predict every class and NMS deduplicates."""
    if not proposals:
        return []
    x = np.array([f for _, f in proposals])
    prop_boxes = np.array([b.as_array() for b, _ in proposals])
    scores_h, deltas_h = forward_batch(params_h, x)
    scores_t, deltas_t = forward_batch(params_t, x)
    n = partition.num_classes
    # interleave the two heads per class so emission order is
    # (proposal, class, head-then-tail)
    scores = np.empty((len(proposals), 2 * n))
    scores[:, 0::2] = scores_h[:, :n]
    scores[:, 1::2] = scores_t[:, :n]
    deltas = np.empty((len(proposals), 2 * n, 4))
    deltas[:, 0::2] = deltas_h
    deltas[:, 1::2] = deltas_t
    sources = [SOURCE_HEAD if k % 2 == 0 else SOURCE_TAIL for k in range(2 * n)]
    class_of = [k // 2 for k in range(2 * n)]
    cands = _emit(prop_boxes, scores, deltas, sources, cfg, extent, class_of)
    return _finalize(cands, cfg)


def predict_cascade(
    stage_pairs: list[tuple[HeadParams, HeadParams]],
    proposals: list[Proposal],
    partition: ClassPartition,
    cfg: InferenceConfig,
    extent: tuple[float, float],
) -> list[ScoredDetection]:
    """Multi-stage prediction: boxes are refined between stages, class scores
    are the mean of each stage's group-masked scores, and the final box comes
    from the last stage's owning head."""
    if not proposals:
        return []
    if not stage_pairs:
        raise ValueError("cascade needs at least one stage")
    num_classes = partition.num_classes
    mask = _head_mask(partition)
    current = list(proposals)
    x = np.array([f for _, f in proposals])
    masked_sum = np.zeros((len(proposals), num_classes))
    for k, (p_h, p_t) in enumerate(stage_pairs, start=1):
        scores_h, deltas_h = forward_batch(p_h, x)
        scores_t, deltas_t = forward_batch(p_t, x)
        masked_sum += np.where(mask[None, :], scores_h[:, :num_classes], scores_t[:, :num_classes])
        if k < len(stage_pairs):
            current = refine_boxes(current, p_h, p_t, partition, extent)
    scores = masked_sum / len(stage_pairs)
    deltas = np.where(mask[None, :, None], deltas_h, deltas_t)
    prop_boxes = np.array([b.as_array() for b, _ in current])
    sources = [cascade_source(len(stage_pairs))] * num_classes
    return _finalize(_emit(prop_boxes, scores, deltas, sources, cfg, extent), cfg)


def run_inference(
    model: TrainedModel,
    proposals: list[Proposal],
    partition: ClassPartition,
    cfg: InferenceConfig,
    extent: tuple[float, float],
) -> list[ScoredDetection]:
    """Dispatch to the prediction path matching the model's training mode."""
    mode = model.mode
    if mode in ("rs", "rs-dbl", "cbs", "one-stage-mask"):
        return predict_single(model.single(), proposals, cfg, extent)
    if mode in ("rs-dbl+bbh", "cbs+bbh", "ces+bbh", "mmf"):
        return predict_dual(*model.pair(), proposals, partition, cfg, extent)
    if mode == "cbs+bbh-all":
        return predict_all_nms(*model.pair(), proposals, partition, cfg, extent)
    if mode == "cascade":
        return predict_cascade(model.stage_pairs(), proposals, partition, cfg, extent)
    raise ValueError(f"unknown mode: {mode!r}")


# ---------------------------------------------------------------------------
# Detections file: one line per detection, whitespace-separated:
#   scene_id class_id score x1 y1 x2 y2 source
# Scores carry 6 decimals; coordinates use shortest exact float repr.


def format_detection_line(scene_id: int, det: ScoredDetection) -> str:
    b = det.box
    coords = " ".join(repr(float(v)) for v in (b.x1, b.y1, b.x2, b.y2))
    return f"{scene_id} {det.class_id} {det.score:.6f} {coords} {det.source_head}"


def write_detections(path: str, dets_by_scene: dict[int, list[ScoredDetection]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene_id in sorted(dets_by_scene):
            for det in dets_by_scene[scene_id]:
                fh.write(format_detection_line(scene_id, det) + "\n")


def parse_detection_line(line: str, line_number: int) -> tuple[int, ScoredDetection]:
    parts = line.split()
    if len(parts) != 8:
        raise ValueError(f"line {line_number}: expected 8 fields, got {len(parts)}")
    try:
        scene_id = int(parts[0])
        class_id = int(parts[1])
        score = float(parts[2])
        x1, y1, x2, y2 = (float(p) for p in parts[3:7])
    except ValueError as exc:
        raise ValueError(f"line {line_number}: {exc}") from None
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"line {line_number}: score outside [0, 1]: {score}")
    return scene_id, ScoredDetection(Box(x1, y1, x2, y2), class_id, score, parts[7])


def read_detections(path: str) -> dict[int, list[ScoredDetection]]:
    dets: dict[int, list[ScoredDetection]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            scene_id, det = parse_detection_line(line, i)
            dets.setdefault(scene_id, []).append(det)
    return dets
