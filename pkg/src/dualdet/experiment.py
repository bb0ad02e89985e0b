"""Config-driven experiment orchestration.

One ExperimentConfig bundles the dataset recipe, sampler quotas, training
schedule, and inference settings; every field has a default so an empty
config file (or none at all) runs. A run is a pure function of
(config, dataset, mode, seed): scenes split 80/20 into train/eval by a hash
of the scene id, the heads train on the train split, and detections on the
eval split are scored. Per-seed reports, a detections file, a checkpoint,
and a seed-aggregated CSV land in the output directory; all files are
written atomically and contain no timestamps, so identical inputs give
byte-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .evaluation import EvalReport, evaluate, format_report_table
from .fusion import (
    InferenceConfig,
    format_detection_line,
    parse_detection_line,
    read_detections,
    run_inference,
)
from .geometry import ScoredDetection
from .heads import ALL_MODES, TrainConfig, save_checkpoint, train
from .samplers import SamplerConfig
from .scenes import (
    ClassPartition,
    ClassSpec,
    DatasetFormatError,
    Scene,
    SceneConfig,
    default_visdrone_spec,
    generate_dataset,
    generate_proposals,
    partition_from_specs,
    read_dataset,
    write_dataset,
)

OUT_DIR_ENV_VAR = "DUALDET_OUT"
DEFAULT_OUT_DIR = "runs"

ABLATION_MODES = ("rs", "rs-dbl", "rs-dbl+bbh", "ces+bbh", "cbs", "cbs+bbh-all", "cbs+bbh", "mmf")

EVAL_SPLIT_BUCKETS = 5  # scene joins the eval split when its hash bucket is 0
_EVAL_PROPOSAL_STREAM = 23


class ConfigError(Exception):
    """Invalid experiment configuration (CLI exit code 2)."""


class DataError(Exception):
    """Invalid or unreadable dataset/detections input (CLI exit code 3)."""


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "cbs+bbh"
    class_set: str = "visdrone"
    dataset: SceneConfig = field(default_factory=SceneConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)

    def __post_init__(self):
        if self.mode not in ALL_MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {sorted(ALL_MODES)}")
        if self.class_set != "visdrone":
            raise ConfigError(f"unknown class_set {self.class_set!r}")

    def resolve_classes(self) -> tuple[list[ClassSpec], ClassPartition]:
        specs = default_visdrone_spec(feature_dim=self.dataset.feature_dim)
        return specs, partition_from_specs(specs)


def config_to_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


_SECTIONS = {
    "dataset": SceneConfig,
    "sampler": SamplerConfig,
    "train": TrainConfig,
    "inference": InferenceConfig,
}


def _build_section(cls, data: dict, section: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {unknown}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {section} config: {exc}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be an object, got {type(data).__name__}")
    top_level = {"mode", "class_set", *_SECTIONS}
    unknown = sorted(set(data) - top_level)
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {unknown}")
    kwargs: dict = {}
    for name in ("mode", "class_set"):
        if name in data:
            kwargs[name] = data[name]
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        kwargs[name] = _build_section(cls, section, name)
    return ExperimentConfig(**kwargs)


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(data)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Train/eval split: stable hash of the scene id, independent of mode, seed,
# and dataset size.


def is_eval_scene(scene_id: int) -> bool:
    digest = hashlib.sha256(str(scene_id).encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big") % EVAL_SPLIT_BUCKETS == 0


def split_scenes(scenes: list[Scene]) -> tuple[list[Scene], list[Scene]]:
    train_split = [s for s in scenes if not is_eval_scene(s.scene_id)]
    eval_split = [s for s in scenes if is_eval_scene(s.scene_id)]
    return train_split, eval_split


def load_scenes(config: ExperimentConfig, dataset_path: str | None) -> list[Scene]:
    """Scenes from the dataset file, or generated fresh when no path is given."""
    if dataset_path is None:
        specs, _ = config.resolve_classes()
        return generate_dataset(specs, config.dataset)
    try:
        scenes, _specs, _cfg = read_dataset(dataset_path)
    except OSError as exc:
        raise DataError(f"cannot read dataset {dataset_path}: {exc}") from None
    except DatasetFormatError as exc:
        raise DataError(f"corrupt dataset {dataset_path}: {exc}") from None
    return scenes


# ---------------------------------------------------------------------------
# Single runs.


@dataclass(frozen=True)
class RunResult:
    mode: str
    seed: int
    config_hash: str
    num_train_scenes: int
    num_eval_scenes: int
    report: EvalReport
    dets_by_scene: dict[int, list[ScoredDetection]]

    def report_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "num_train_scenes": self.num_train_scenes,
            "num_eval_scenes": self.num_eval_scenes,
            "metrics": self.report.metrics(),
        }


def _round_trip(dets_by_scene: dict[int, list[ScoredDetection]]) -> dict[int, list[ScoredDetection]]:
    # Pass every detection through the line format once so in-memory metrics
    # always agree with re-scoring the written file.
    out: dict[int, list[ScoredDetection]] = {}
    for scene_id, dets in dets_by_scene.items():
        out[scene_id] = [
            parse_detection_line(format_detection_line(scene_id, d), 0)[1] for d in dets
        ]
    return out


def run_single(
    config: ExperimentConfig,
    scenes: list[Scene],
    mode: str,
    seed: int,
    model_out: str | None = None,
) -> RunResult:
    """Train one mode on one seed and score the eval split."""
    if mode not in ALL_MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    if config.mode != mode:
        config = replace(config, mode=mode)  # keep the embedded hash honest
    _specs, partition = config.resolve_classes()
    train_scenes, eval_scenes = split_scenes(scenes)
    if not train_scenes or not eval_scenes:
        raise DataError(
            f"split produced {len(train_scenes)} train / {len(eval_scenes)} eval scenes; "
            "need both non-empty"
        )
    model = train(train_scenes, partition, mode, config.train, config.sampler, config.dataset, seed)
    chash = config_hash(config)
    if model_out is not None:
        _atomic(model_out, lambda path: save_checkpoint(model, path, seed, chash))
    dets_by_scene: dict[int, list[ScoredDetection]] = {}
    for scene in eval_scenes:
        rng = np.random.default_rng([seed, scene.scene_id, _EVAL_PROPOSAL_STREAM])
        proposals = generate_proposals(
            scene,
            config.dataset,
            rng,
            jitter_sigma=config.train.jitter_sigma,
            num_background=config.train.num_background,
            k_pos=config.train.k_pos,
        )
        dets_by_scene[scene.scene_id] = run_inference(
            model, proposals, partition, config.inference, config.dataset.scene_extent
        )
    dets_by_scene = _round_trip(dets_by_scene)
    report = evaluate(dets_by_scene, eval_scenes, partition)
    return RunResult(
        mode=mode,
        seed=seed,
        config_hash=chash,
        num_train_scenes=len(train_scenes),
        num_eval_scenes=len(eval_scenes),
        report=report,
        dets_by_scene=dets_by_scene,
    )


def _checkpoint_path(out_dir: str | None, mode: str, seed: int) -> str | None:
    if out_dir is None:
        return None
    return os.path.join(out_dir, f"checkpoint_{_slug(mode)}_seed{seed}.json")


def _worker(args: tuple[dict, str, str, int, str | None]) -> tuple[str, int, RunResult]:
    config_data, dataset_path, mode, seed, model_out = args
    config = config_from_dict(config_data)
    scenes = load_scenes(config, dataset_path)
    return mode, seed, run_single(config, scenes, mode, seed, model_out)


def run_grid(
    config: ExperimentConfig,
    scenes: list[Scene],
    pairs: list[tuple[str, int]],
    jobs: int = 1,
    dataset_path: str | None = None,
    checkpoint_dir: str | None = None,
) -> dict[tuple[str, int], RunResult]:
    """Run each (mode, seed) pair, optionally across worker processes.

    Parallel workers reload the dataset from its path, so jobs > 1 requires
    a dataset file.
    """
    if jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {jobs}")
    results: dict[tuple[str, int], RunResult] = {}
    if jobs == 1 or len(pairs) <= 1:
        for mode, seed in pairs:
            results[(mode, seed)] = run_single(
                config, scenes, mode, seed, _checkpoint_path(checkpoint_dir, mode, seed)
            )
        return results
    if dataset_path is None:
        raise ConfigError("--jobs > 1 requires --dataset so workers can reload scenes")
    payload = config_to_dict(config)
    args = [
        (payload, dataset_path, mode, seed, _checkpoint_path(checkpoint_dir, mode, seed))
        for mode, seed in pairs
    ]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for mode, seed, result in pool.map(_worker, args):
            results[(mode, seed)] = result
    return results


# ---------------------------------------------------------------------------
# File plumbing.


def _atomic(path: str, writer) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    writer(tmp)
    os.replace(tmp, path)


def write_text_atomic(path: str, text: str) -> None:
    def _write(tmp: str) -> None:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)

    _atomic(path, _write)


def write_json_atomic(path: str, payload: dict) -> None:
    write_text_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def detections_text(dets_by_scene: dict[int, list[ScoredDetection]]) -> str:
    lines = []
    for scene_id in sorted(dets_by_scene):
        for det in dets_by_scene[scene_id]:
            lines.append(format_detection_line(scene_id, det))
    return "\n".join(lines) + ("\n" if lines else "")


AGG_METRICS = ("ap", "ap50", "ap75", "head_group_ap", "tail_group_ap")


def effective_sampler_quota(mode: str, sampler: SamplerConfig) -> SamplerConfig:
    """The per-step sampler quota a mode actually trains with."""
    return sampler.doubled() if mode == "rs-dbl" else sampler


def aggregate_rows(
    results: dict[tuple[str, int], RunResult],
    modes: list[str],
    sampler: SamplerConfig | None = None,
) -> list[dict]:
    """One CSV row per mode: mean and population std of each metric over seeds."""
    sampler = sampler or SamplerConfig()
    rows = []
    for mode in modes:
        per_seed = [r for (m, _), r in sorted(results.items()) if m == mode]
        if not per_seed:
            continue
        quota = effective_sampler_quota(mode, sampler)
        row: dict = {
            "mode": mode,
            "num_seeds": len(per_seed),
            "seeds": ";".join(str(r.seed) for r in per_seed),
            "config_hash": per_seed[0].config_hash,
            "num_samples": quota.num_samples,
            "pos_fraction": f"{quota.pos_fraction:g}",
        }
        for metric in AGG_METRICS:
            values = np.array([getattr(r.report, metric) for r in per_seed])
            row[f"{metric}_mean"] = f"{values.mean():.6f}"
            row[f"{metric}_std"] = f"{values.std():.6f}"
        rows.append(row)
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Commands. Each returns the structured result it wrote, for callers and tests.


def resolve_out_dir(out: str | None) -> str:
    out = out or os.environ.get(OUT_DIR_ENV_VAR) or DEFAULT_OUT_DIR
    os.makedirs(out, exist_ok=True)
    return out


def _slug(mode: str) -> str:
    return mode.replace("+", "_")


def cmd_generate(config: ExperimentConfig, out_path: str) -> int:
    """Write the synthetic dataset described by the config. Returns scene count."""
    specs, _ = config.resolve_classes()
    scenes = generate_dataset(specs, config.dataset)

    def _write(tmp: str) -> None:
        write_dataset(tmp, scenes, specs, config.dataset)

    try:
        _atomic(out_path, _write)
    except OSError as exc:
        raise DataError(f"cannot write dataset {out_path}: {exc}") from None
    return len(scenes)


def write_run_artifacts(
    out_dir: str, results: dict[tuple[str, int], RunResult], modes: list[str], class_names: list[str]
) -> None:
    for (mode, seed), result in sorted(results.items()):
        stem = f"{_slug(mode)}_seed{seed}"
        write_json_atomic(os.path.join(out_dir, f"report_{stem}.json"), result.report_dict())
        write_text_atomic(
            os.path.join(out_dir, f"detections_{stem}.txt"), detections_text(result.dets_by_scene)
        )
    for mode in modes:
        per_seed = [((m, s), r) for (m, s), r in sorted(results.items()) if m == mode]
        table = format_report_table(
            [(f"{mode}/seed{seed}", r.report) for (_, seed), r in per_seed], class_names
        )
        write_text_atomic(os.path.join(out_dir, f"report_{_slug(mode)}.txt"), table)


def cmd_run(
    config: ExperimentConfig,
    dataset_path: str | None,
    out_dir: str,
    jobs: int = 1,
) -> dict[tuple[str, int], RunResult]:
    """Train and evaluate config.mode over config.train.seeds."""
    scenes = load_scenes(config, dataset_path)
    specs, _ = config.resolve_classes()
    pairs = [(config.mode, seed) for seed in config.train.seeds]
    results = run_grid(config, scenes, pairs, jobs, dataset_path, checkpoint_dir=out_dir)
    names = [s.name for s in specs]
    write_run_artifacts(out_dir, results, [config.mode], names)
    rows = aggregate_rows(results, [config.mode], config.sampler)
    write_text_atomic(os.path.join(out_dir, f"aggregate_{_slug(config.mode)}.csv"), rows_to_csv(rows))
    return results


def cmd_ablate(
    config: ExperimentConfig,
    dataset_path: str | None,
    out_dir: str,
    jobs: int = 1,
) -> dict[tuple[str, int], RunResult]:
    """Run the fixed mode ablation over the config's seeds on one dataset."""
    scenes = load_scenes(config, dataset_path)
    specs, _ = config.resolve_classes()
    pairs = [(mode, seed) for mode in ABLATION_MODES for seed in config.train.seeds]
    results = run_grid(config, scenes, pairs, jobs, dataset_path)
    names = [s.name for s in specs]
    write_run_artifacts(out_dir, results, list(ABLATION_MODES), names)
    rows = aggregate_rows(results, list(ABLATION_MODES), config.sampler)
    write_text_atomic(os.path.join(out_dir, "ablation.csv"), rows_to_csv(rows))
    return results


def cmd_sweep_lambda(
    config: ExperimentConfig,
    dataset_path: str | None,
    lambdas: list[float],
    out_dir: str,
    jobs: int = 1,
) -> list[dict]:
    """Sweep the tail-loss weight for the dual-head mode; one CSV row per value."""
    if not lambdas:
        raise ConfigError("lambda sweep needs at least one value")
    if any(lam < 0 for lam in lambdas):
        raise ConfigError("lambda values must be >= 0")
    scenes = load_scenes(config, dataset_path)
    rows: list[dict] = []
    for lam in lambdas:
        sweep_config = replace(
            config, mode="cbs+bbh", train=replace(config.train, lambda_tail=lam)
        )
        pairs = [("cbs+bbh", seed) for seed in sweep_config.train.seeds]
        results = run_grid(sweep_config, scenes, pairs, jobs, dataset_path)
        per_seed = [results[p] for p in sorted(results)]
        rows.append(
            {
                "lambda": f"{lam:g}",
                "ap_mean": f"{np.mean([r.report.ap for r in per_seed]):.6f}",
                "tail_group_ap_mean": f"{np.mean([r.report.tail_group_ap for r in per_seed]):.6f}",
                "head_group_ap_mean": f"{np.mean([r.report.head_group_ap for r in per_seed]):.6f}",
                "num_seeds": len(per_seed),
                "config_hash": per_seed[0].config_hash,
            }
        )
    write_text_atomic(os.path.join(out_dir, "lambda_sweep.csv"), rows_to_csv(rows))
    return rows


def cmd_evaluate(
    config: ExperimentConfig,
    dataset_path: str | None,
    detections_path: str,
    out_dir: str,
) -> EvalReport:
    """Re-score an existing detections file against the dataset's eval split."""
    scenes = load_scenes(config, dataset_path)
    specs, partition = config.resolve_classes()
    _train_scenes, eval_scenes = split_scenes(scenes)
    try:
        dets_by_scene = read_detections(detections_path)
    except OSError as exc:
        raise DataError(f"cannot read detections {detections_path}: {exc}") from None
    except ValueError as exc:
        raise DataError(f"corrupt detections {detections_path}: {exc}") from None
    try:
        report = evaluate(dets_by_scene, eval_scenes, partition)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    payload = {
        "config_hash": config_hash(config),
        "detections_path": os.path.basename(detections_path),
        "num_eval_scenes": len(eval_scenes),
        "metrics": report.metrics(),
    }
    write_json_atomic(os.path.join(out_dir, "evaluate_report.json"), payload)
    write_text_atomic(
        os.path.join(out_dir, "evaluate_report.txt"),
        format_report_table([("evaluate", report)], [s.name for s in specs]),
    )
    return report
