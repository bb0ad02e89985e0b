"""Trainable box heads: forward pass, losses, and the mode-dispatching trainer.

A head is a small MLP in float64: two shared hidden layers, then a softmax
classifier over all foreground classes plus background and a per-class box
regressor. Gradients are hand-derived (plain backprop) so they can be checked
against finite differences, and optimization is plain SGD with a staircase
learning-rate schedule.

The bilateral pair is two fully independent heads trained on the tail- and
head-biased sample sets; their losses combine as
``total = loss_head + lambda * loss_tail``, with gradients flowing to each
head only from its own term.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

from .assignment import (
    BACKGROUND,
    LabeledProposal,
    ProposalPartition,
    assign,
    decode_deltas,
    decode_deltas_batch,
)
from .samplers import (
    BIAS_NONE,
    SampleSet,
    SamplerConfig,
    cbs,
    ces,
    random_sampler,
    rs_dbl,
)
from .scenes import (
    ClassPartition,
    Scene,
    SceneConfig,
    _clip_box,
    _clip_boxes,
    generate_proposals,
)
from .geometry import Box

CHECKPOINT_FORMAT_VERSION = 1

# Regression outputs are clamped before decoding at inference so an untrained
# head cannot produce overflowing or runaway boxes. Encode/decode themselves
# stay exact inverses.
DELTA_WH_CLIP = 4.0
DELTA_XY_CLIP = 100.0

MODE_RS = "rs"
MODE_RS_DBL = "rs-dbl"
MODE_RS_DBL_BBH = "rs-dbl+bbh"
MODE_CBS_SINGLE = "cbs"
MODE_CBS_BBH = "cbs+bbh"
MODE_CES_BBH = "ces+bbh"
MODE_CBS_BBH_ALL = "cbs+bbh-all"
MODE_CASCADE = "cascade"
MODE_ONE_STAGE = "one-stage-mask"
MODE_MMF = "mmf"

ALL_MODES = (
    MODE_RS,
    MODE_RS_DBL,
    MODE_RS_DBL_BBH,
    MODE_CBS_SINGLE,
    MODE_CBS_BBH,
    MODE_CES_BBH,
    MODE_CBS_BBH_ALL,
    MODE_CASCADE,
    MODE_ONE_STAGE,
    MODE_MMF,
)

SINGLE_HEAD_MODES = (MODE_RS, MODE_RS_DBL, MODE_CBS_SINGLE, MODE_ONE_STAGE)
DUAL_HEAD_MODES = (MODE_RS_DBL_BBH, MODE_CBS_BBH, MODE_CES_BBH, MODE_CBS_BBH_ALL, MODE_MMF)


@dataclass
class HeadParams:
    """Weights of one head: two hidden layers plus classifier and regressor."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_cls: np.ndarray
    b_cls: np.ndarray
    w_reg: np.ndarray
    b_reg: np.ndarray

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w_cls.shape[1] - 1

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def copy(self) -> "HeadParams":
        return HeadParams(*(a.copy() for a in self.arrays()))

    def scaled(self, factor: float) -> "HeadParams":
        return HeadParams(*(a * factor for a in self.arrays()))


def init_head(feature_dim: int, num_classes: int, hidden: int, rng: np.random.Generator) -> HeadParams:
    """Uniform[-1/sqrt(fan_in), 1/sqrt(fan_in)] initialization per layer."""

    def layer(fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, (fan_in, fan_out))
        b = rng.uniform(-bound, bound, fan_out)
        return w, b

    w1, b1 = layer(feature_dim, hidden)
    w2, b2 = layer(hidden, hidden)
    w_cls, b_cls = layer(hidden, num_classes + 1)
    w_reg, b_reg = layer(hidden, 4 * num_classes)
    return HeadParams(w1, b1, w2, b2, w_cls, b_cls, w_reg, b_reg)


@dataclass(frozen=True)
class Prediction:
    """Softmax class scores (foreground classes then background) and per-class deltas."""

    class_scores: np.ndarray  # (num_classes + 1,)
    box_deltas: np.ndarray  # (num_classes, 4)


@dataclass(frozen=True)
class LossBreakdown:
    l_h: float
    l_t: float
    lam: float
    total: float


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def forward_batch(params: HeadParams, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scores (N, C+1) and deltas (N, C, 4) for a feature matrix (N, D)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.feature_dim:
        raise ValueError(f"expected (N, {params.feature_dim}) features, got {features.shape}")
    a1 = np.maximum(features @ params.w1 + params.b1, 0.0)
    a2 = np.maximum(a1 @ params.w2 + params.b2, 0.0)
    scores = _softmax(a2 @ params.w_cls + params.b_cls)
    deltas = (a2 @ params.w_reg + params.b_reg).reshape(len(features), params.num_classes, 4)
    return scores, deltas


def forward(params: HeadParams, feature: np.ndarray) -> Prediction:
    """Single-feature forward pass."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (params.feature_dim,):
        raise ValueError(f"expected feature of dim {params.feature_dim}, got {feature.shape}")
    scores, deltas = forward_batch(params, feature[None, :])
    return Prediction(scores[0], deltas[0])


def _smooth_l1(diff: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # value and derivative, transition point 1.0
    absd = np.abs(diff)
    value = np.where(absd < 1.0, 0.5 * diff * diff, absd - 0.5)
    grad = np.clip(diff, -1.0, 1.0)
    return value, grad


def head_loss(params: HeadParams, sample_set: SampleSet) -> tuple[float, HeadParams]:
    """Cross-entropy over all samples plus smooth-L1 regression on positives.

    Classification is averaged over every sample (background included);
    regression applies only to each positive's matched-class delta slot and
    is averaged over the positives. Returns the scalar loss and gradients
    shaped like the parameters.
    """
    samples = list(sample_set.positives) + list(sample_set.negatives)
    if not samples:
        raise ValueError("empty sample set")
    num_classes = params.num_classes
    n = len(samples)
    x = np.array([s.feature for s in samples], dtype=np.float64)
    labels = np.array(
        [num_classes if s.label == BACKGROUND else s.label for s in samples], dtype=np.intp
    )
    pos_rows = np.array([i for i, s in enumerate(samples) if s.label != BACKGROUND], dtype=np.intp)

    z1 = x @ params.w1 + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.w2 + params.b2
    a2 = np.maximum(z2, 0.0)
    logits = a2 @ params.w_cls + params.b_cls
    deltas = a2 @ params.w_reg + params.b_reg

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    cls_loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    d_logits = probs
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n

    d_deltas = np.zeros_like(deltas)
    reg_loss = 0.0
    if len(pos_rows):
        classes = labels[pos_rows]
        cols = (4 * classes)[:, None] + np.arange(4)[None, :]
        targets = np.array([samples[i].regression_target for i in pos_rows])
        diff = deltas[pos_rows[:, None], cols] - targets
        value, grad = _smooth_l1(diff)
        reg_loss = float(value.sum() / len(pos_rows))
        d_deltas[pos_rows[:, None], cols] = grad / len(pos_rows)

    d_a2 = d_logits @ params.w_cls.T + d_deltas @ params.w_reg.T
    d_z2 = d_a2 * (z2 > 0.0)
    d_a1 = d_z2 @ params.w2.T
    d_z1 = d_a1 * (z1 > 0.0)
    grads = HeadParams(
        w1=x.T @ d_z1,
        b1=d_z1.sum(axis=0),
        w2=a1.T @ d_z2,
        b2=d_z2.sum(axis=0),
        w_cls=a2.T @ d_logits,
        b_cls=d_logits.sum(axis=0),
        w_reg=a2.T @ d_deltas,
        b_reg=d_deltas.sum(axis=0),
    )
    return cls_loss + reg_loss, grads


def bbh_loss(
    params_h: HeadParams,
    params_t: HeadParams,
    r_h: SampleSet,
    r_t: SampleSet,
    lam: float,
) -> tuple[LossBreakdown, HeadParams, HeadParams]:
    """Combined bilateral loss: total = l_h + lam * l_t.

    Each head's gradients come only from its own term; the tail head's are
    scaled by lam (so lam = 0 freezes it exactly).
    """
    if lam < 0.0:
        raise ValueError("lambda must be >= 0")
    l_h, grads_h = head_loss(params_h, r_h)
    l_t, grads_t = head_loss(params_t, r_t)
    breakdown = LossBreakdown(l_h=l_h, l_t=l_t, lam=lam, total=l_h + lam * l_t)
    return breakdown, grads_h, grads_t.scaled(lam)


def sgd_step(params: HeadParams, grads: HeadParams, lr: float) -> None:
    for p, g in zip(params.arrays(), grads.arrays()):
        p -= lr * g


def learning_rate(epoch: int, total_epochs: int, base_lr: float, decay: float) -> float:
    """Staircase schedule: decayed at 2/3 and 5/6 of the epoch budget."""
    milestones = (max(1, (2 * total_epochs) // 3), max(1, (5 * total_epochs) // 6))
    return base_lr * decay ** sum(epoch >= m for m in milestones)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    base_lr: float = 0.01
    lr_decay: float = 0.1
    hidden_width: int = 64
    lambda_tail: float = 2.0
    jitter_sigma: float = 1.5
    num_background: int = 128
    k_pos: int = 4
    pos_thr: float = 0.5
    neg_thr: float = 0.5
    cascade_pos_thrs: tuple[float, float, float] = (0.5, 0.6, 0.7)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.seeds:
            raise ValueError("seeds list must be non-empty")


@dataclass
class TrainedModel:
    """Frozen output of train(): one or more named heads, keyed by role.

    Keys are "single", "head"/"tail", or "stage{k}_head"/"stage{k}_tail"
    for the cascade.
    """

    mode: str
    heads: dict[str, HeadParams]

    def single(self) -> HeadParams:
        return self.heads["single"]

    def pair(self) -> tuple[HeadParams, HeadParams]:
        return self.heads["head"], self.heads["tail"]

    def stage_pairs(self) -> list[tuple[HeadParams, HeadParams]]:
        n = len(self.heads) // 2
        return [(self.heads[f"stage{k}_head"], self.heads[f"stage{k}_tail"]) for k in range(1, n + 1)]


def _merge_sets(a: SampleSet, b: SampleSet) -> SampleSet:
    return SampleSet(a.positives + b.positives, a.negatives + b.negatives, BIAS_NONE)


def _dedup_union(a: SampleSet, b: SampleSet) -> SampleSet:
    """Union by identity: proposals sampled by both sides get weight 1 once."""
    seen: set[int] = set()
    positives: list[LabeledProposal] = []
    negatives: list[LabeledProposal] = []
    for p in a.positives + b.positives:
        if id(p) not in seen:
            seen.add(id(p))
            positives.append(p)
    for p in a.negatives + b.negatives:
        if id(p) not in seen:
            seen.add(id(p))
            negatives.append(p)
    return SampleSet(tuple(positives), tuple(negatives), BIAS_NONE)


def _relabel_group_as_background(pool: tuple[LabeledProposal, ...]) -> tuple[LabeledProposal, ...]:
    return tuple(
        LabeledProposal(p.box, p.feature, BACKGROUND, p.max_iou, None, None) for p in pool
    )


def clip_deltas(deltas: np.ndarray) -> np.ndarray:
    """Clamp (..., 4) delta arrays to the inference safety range."""
    out = np.array(deltas, dtype=np.float64)
    out[..., 0:2] = np.clip(out[..., 0:2], -DELTA_XY_CLIP, DELTA_XY_CLIP)
    out[..., 2:4] = np.clip(out[..., 2:4], -DELTA_WH_CLIP, DELTA_WH_CLIP)
    return out


def clipped_decode(proposal: Box, deltas: np.ndarray, extent: tuple[float, float] | None = None) -> Box:
    """Decode with clamped deltas; optionally clip the result into an extent."""
    box = decode_deltas(proposal, clip_deltas(np.asarray(deltas, dtype=np.float64)))
    if extent is not None:
        box = _clip_box(box.x1, box.y1, box.x2, box.y2, extent)
    return box


def clipped_decode_boxes(
    prop_boxes: np.ndarray,
    deltas: np.ndarray,
    extent: tuple[float, float] | None = None,
) -> list[Box]:
    """Vectorized clipped_decode: (N, 4) proposals x (N, 4) deltas -> boxes."""
    corners = decode_deltas_batch(prop_boxes, clip_deltas(deltas))
    if extent is None:
        return [Box(*row) for row in corners]
    return _clip_boxes(corners, extent)


def refine_boxes(
    proposals: list[tuple[Box, np.ndarray]],
    params_h: HeadParams,
    params_t: HeadParams,
    partition: ClassPartition,
    extent: tuple[float, float],
) -> list[tuple[Box, np.ndarray]]:
    """One cascade refinement step.

    For each proposal, take the group-masked foreground scores (head classes
    from the head-biased head, tail classes from the tail-biased head), find
    the argmax class, and decode that class's deltas from the head owning it.
    Features pass through unchanged.
    """
    if not proposals:
        return []
    num_classes = partition.num_classes
    x = np.array([f for _, f in proposals])
    scores_h, deltas_h = forward_batch(params_h, x)
    scores_t, deltas_t = forward_batch(params_t, x)
    head_mask = np.array([c in partition.head_classes for c in range(num_classes)])
    fused = np.where(head_mask[None, :], scores_h[:, :num_classes], scores_t[:, :num_classes])
    best = fused.argmax(axis=1)
    rows = np.arange(len(proposals))
    deltas = np.where(head_mask[best][:, None], deltas_h[rows, best], deltas_t[rows, best])
    prop_boxes = np.array([box.as_array() for box, _ in proposals])
    boxes = clipped_decode_boxes(prop_boxes, deltas, extent)
    return [(boxes[i], proposals[i][1]) for i in range(len(proposals))]


def train(
    scenes: list[Scene],
    partition: ClassPartition,
    mode: str,
    cfg: TrainConfig,
    sampler_cfg: SamplerConfig,
    scene_cfg: SceneConfig,
    seed: int,
) -> TrainedModel:
    """Train the heads for one mode on a scene list.

    Per epoch the scenes are visited in a seeded shuffled order; per scene,
    proposals are generated fresh, assigned, sampled per the mode, and the
    heads take one SGD step. Everything is a deterministic function of the
    arguments (proposal noise derives from (seed, scene_id, epoch), so it is
    identical across modes for a given seed).
    """
    if mode not in ALL_MODES:
        raise ValueError(f"unknown mode: {mode!r}")
    if not scenes:
        raise ValueError("empty dataset")
    num_classes = partition.num_classes
    dim = scene_cfg.feature_dim
    hidden = cfg.hidden_width
    init_rng = np.random.default_rng([seed, 101])
    order_rng = np.random.default_rng([seed, 202])
    sample_rng = np.random.default_rng([seed, 303])

    def new_head() -> HeadParams:
        return init_head(dim, num_classes, hidden, init_rng)

    if mode in SINGLE_HEAD_MODES:
        heads = {"single": new_head()}
    elif mode in DUAL_HEAD_MODES:
        heads = {"head": new_head(), "tail": new_head()}
    else:
        heads = {}
        for k in (1, 2, 3):
            heads[f"stage{k}_head"] = new_head()
            heads[f"stage{k}_tail"] = new_head()

    lam = cfg.lambda_tail

    def step_single(params: HeadParams, sample_set: SampleSet, lr: float) -> None:
        if not sample_set.positives and not sample_set.negatives:
            return
        _, grads = head_loss(params, sample_set)
        sgd_step(params, grads, lr)

    def step_pair(r_h: SampleSet, r_t: SampleSet, lr: float) -> None:
        if (not r_h.positives and not r_h.negatives) or (not r_t.positives and not r_t.negatives):
            return
        _, grads_h, grads_t = bbh_loss(heads["head"], heads["tail"], r_h, r_t, lam)
        sgd_step(heads["head"], grads_h, lr)
        sgd_step(heads["tail"], grads_t, lr)

    for epoch in range(cfg.epochs):
        lr = learning_rate(epoch, cfg.epochs, cfg.base_lr, cfg.lr_decay)
        for scene_index in order_rng.permutation(len(scenes)):
            scene = scenes[scene_index]
            prop_rng = np.random.default_rng([seed, scene.scene_id, epoch, 17])
            proposals = generate_proposals(
                scene,
                scene_cfg,
                prop_rng,
                jitter_sigma=cfg.jitter_sigma,
                num_background=cfg.num_background,
                k_pos=cfg.k_pos,
            )
            if mode == MODE_CASCADE:
                current = proposals
                for k, pos_thr in enumerate(cfg.cascade_pos_thrs, start=1):
                    part = assign(current, scene, partition, pos_thr, min(cfg.neg_thr, pos_thr))
                    r_t, r_h = cbs(part, sampler_cfg, sample_rng)
                    p_h, p_t = heads[f"stage{k}_head"], heads[f"stage{k}_tail"]
                    if (r_h.positives or r_h.negatives) and (r_t.positives or r_t.negatives):
                        _, grads_h, grads_t = bbh_loss(p_h, p_t, r_h, r_t, lam)
                        sgd_step(p_h, grads_h, lr)
                        sgd_step(p_t, grads_t, lr)
                    if k < len(cfg.cascade_pos_thrs):
                        current = refine_boxes(current, p_h, p_t, partition, scene_cfg.scene_extent)
                continue

            part = assign(proposals, scene, partition, cfg.pos_thr, cfg.neg_thr)
            if mode == MODE_RS:
                step_single(heads["single"], random_sampler(part, sampler_cfg, sample_rng), lr)
            elif mode == MODE_RS_DBL:
                step_single(heads["single"], rs_dbl(part, sampler_cfg, sample_rng), lr)
            elif mode == MODE_CBS_SINGLE:
                r_t, r_h = cbs(part, sampler_cfg, sample_rng)
                step_single(heads["single"], _merge_sets(r_t, r_h), lr)
            elif mode == MODE_ONE_STAGE:
                r_t, r_h = cbs(part, sampler_cfg, sample_rng)
                step_single(heads["single"], _dedup_union(r_t, r_h), lr)
            elif mode in (MODE_CBS_BBH, MODE_CBS_BBH_ALL):
                r_t, r_h = cbs(part, sampler_cfg, sample_rng)
                step_pair(r_h, r_t, lr)
            elif mode == MODE_CES_BBH:
                r_t, r_h = ces(part, sampler_cfg, sample_rng)
                step_pair(r_h, r_t, lr)
            elif mode == MODE_RS_DBL_BBH:
                r_h = random_sampler(part, sampler_cfg, sample_rng)
                r_t = random_sampler(part, sampler_cfg, sample_rng)
                step_pair(r_h, r_t, lr)
            elif mode == MODE_MMF:
                # Each group's model sees the other group's objects as background.
                part_head = ProposalPartition(
                    s_t=(), s_h=part.s_h, s_b=part.s_b + _relabel_group_as_background(part.s_t)
                )
                part_tail = ProposalPartition(
                    s_t=part.s_t, s_h=(), s_b=part.s_b + _relabel_group_as_background(part.s_h)
                )
                step_single(heads["head"], random_sampler(part_head, sampler_cfg, sample_rng), lr)
                step_single(heads["tail"], random_sampler(part_tail, sampler_cfg, sample_rng), lr)
    return TrainedModel(mode=mode, heads=heads)


# ---------------------------------------------------------------------------
# Checkpoints: JSON with the architecture shape and all weights row-major.


def save_checkpoint(model: TrainedModel, path: str, seed: int, config_hash: str) -> None:
    any_head = next(iter(model.heads.values()))
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "mode": model.mode,
        "seed": seed,
        "config_hash": config_hash,
        "architecture": {
            "feature_dim": any_head.feature_dim,
            "hidden": any_head.hidden,
            "num_classes": any_head.num_classes,
        },
        "heads": {
            name: {f.name: getattr(params, f.name).tolist() for f in fields(params)}
            for name, params in model.heads.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path: str) -> tuple[TrainedModel, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload['format_version']}")
    heads = {
        name: HeadParams(**{key: np.array(value, dtype=np.float64) for key, value in arrays.items()})
        for name, arrays in payload["heads"].items()
    }
    meta = {k: payload[k] for k in ("mode", "seed", "config_hash", "architecture")}
    return TrainedModel(mode=payload["mode"], heads=heads), meta
