"""Desk-scale laboratory for long-tail two-stage detection heads.

Synthetic scenes with a long-tail class distribution, class-biased proposal
samplers, independently trained dual box heads with a weighted combined loss,
group-masked inference fusion, and COCO-style AP scoring, all driven by a
seeded, config-hashed experiment harness.
"""

from .assignment import (
    BACKGROUND,
    LabeledProposal,
    ProposalPartition,
    assign,
    decode_deltas,
    encode_deltas,
)
from .evaluation import (
    EVAL_IOU_THRESHOLDS,
    EvalReport,
    average_precision,
    evaluate,
    match_detections,
)
from .experiment import (
    ConfigError,
    DataError,
    ExperimentConfig,
    RunResult,
    cmd_ablate,
    cmd_evaluate,
    cmd_generate,
    cmd_run,
    cmd_sweep_lambda,
    config_hash,
    load_config,
    run_single,
    split_scenes,
)
from .fusion import (
    InferenceConfig,
    predict_all_nms,
    predict_cascade,
    predict_dual,
    predict_single,
    read_detections,
    run_inference,
    write_detections,
)
from .geometry import Box, ScoredDetection, iou, iou_matrix, nms
from .heads import (
    ALL_MODES,
    HeadParams,
    LossBreakdown,
    Prediction,
    TrainConfig,
    TrainedModel,
    bbh_loss,
    forward,
    forward_batch,
    head_loss,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .samplers import SamplerConfig, SampleSet, cbs, ces, random_sampler, rs_dbl
from .scenes import (
    ClassPartition,
    ClassSpec,
    ObjectInstance,
    Scene,
    SceneConfig,
    default_visdrone_spec,
    generate_dataset,
    generate_proposals,
    generate_scene,
    read_dataset,
    write_dataset,
)

__all__ = [
    "ALL_MODES",
    "BACKGROUND",
    "Box",
    "ClassPartition",
    "ClassSpec",
    "ConfigError",
    "DataError",
    "EVAL_IOU_THRESHOLDS",
    "EvalReport",
    "ExperimentConfig",
    "HeadParams",
    "InferenceConfig",
    "LabeledProposal",
    "LossBreakdown",
    "ObjectInstance",
    "Prediction",
    "ProposalPartition",
    "RunResult",
    "SampleSet",
    "SamplerConfig",
    "Scene",
    "SceneConfig",
    "ScoredDetection",
    "TrainConfig",
    "TrainedModel",
    "assign",
    "average_precision",
    "bbh_loss",
    "cbs",
    "ces",
    "cmd_ablate",
    "cmd_evaluate",
    "cmd_generate",
    "cmd_run",
    "cmd_sweep_lambda",
    "config_hash",
    "decode_deltas",
    "default_visdrone_spec",
    "encode_deltas",
    "evaluate",
    "forward",
    "forward_batch",
    "generate_dataset",
    "generate_proposals",
    "generate_scene",
    "head_loss",
    "iou",
    "iou_matrix",
    "load_checkpoint",
    "load_config",
    "match_detections",
    "nms",
    "predict_all_nms",
    "predict_cascade",
    "predict_dual",
    "predict_single",
    "random_sampler",
    "read_dataset",
    "read_detections",
    "rs_dbl",
    "run_inference",
    "run_single",
    "save_checkpoint",
    "split_scenes",
    "train",
    "write_dataset",
    "write_detections",
]
