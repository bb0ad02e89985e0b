"""Reproducible synthetic long-tail scene generation.

A scene is a list of ground-truth objects, each with a class drawn from a
configurable long-tail distribution, a box placed uniformly inside the scene
extent, and a class-conditioned Gaussian feature vector that stands in for a
pooled RoI feature. Proposal generation jitters ground-truth boxes and adds
uniformly placed background boxes, simulating an upstream proposal network.

All randomness derives from (seed, scene_id), so scenes can be generated in
any order, or in parallel, with identical results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import Box

DATASET_FORMAT_VERSION = 1

# Training-set class frequencies (percent) published for the VisDrone
# benchmark; they sum to 98.9 and are re-normalized before sampling.
VISDRONE_PROPORTIONS_PCT: dict[str, float] = {
    "ped": 23.1,
    "person": 7.9,
    "bicycle": 3.1,
    "car": 42.2,
    "van": 7.2,
    "truck": 3.8,
    "tricycle": 1.4,
    "awn": 0.9,
    "bus": 0.7,
    "motor": 8.6,
}
VISDRONE_HEAD_CLASSES = ("ped", "person", "car")

GROUP_HEAD = "head"
GROUP_TAIL = "tail"


@dataclass(frozen=True)
class ClassSpec:
    """One foreground class: its sampling proportion, group, and feature centroid."""

    class_id: int
    name: str
    proportion: float
    group: str
    feature_centroid: tuple[float, ...]

    def __post_init__(self):
        if not 0.0 < self.proportion <= 1.0:
            raise ValueError(f"proportion outside (0, 1]: {self.proportion}")
        if self.group not in (GROUP_HEAD, GROUP_TAIL):
            raise ValueError(f"unknown group: {self.group}")


@dataclass(frozen=True)
class SceneConfig:
    """Knobs for dataset generation. Ranges are inclusive (min, max) pairs."""

    # 618 scene ids hash-split into exactly 500 train / 118 eval scenes
    num_scenes: int = 618
    objects_per_scene: tuple[int, int] = (30, 90)
    scene_extent: tuple[float, float] = (128.0, 128.0)
    object_size: tuple[float, float] = (8.0, 20.0)
    feature_dim: int = 11
    feature_noise_sigma: float = 0.5
    background_centroid: tuple[float, ...] | None = None
    seed: int = 20240501

    def __post_init__(self):
        if self.num_scenes < 0:
            raise ValueError("num_scenes must be >= 0")
        if self.objects_per_scene[0] < 0:
            raise ValueError("objects_per_scene must be non-negative")
        if self.objects_per_scene[0] > self.objects_per_scene[1]:
            raise ValueError("objects_per_scene min > max")
        if self.object_size[0] <= 0.0:
            raise ValueError("object_size min must be > 0")
        if self.object_size[0] > self.object_size[1]:
            raise ValueError("object_size min > max")
        if self.object_size[1] > min(self.scene_extent):
            raise ValueError("object_size max exceeds scene extent")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.feature_noise_sigma <= 0.0:
            raise ValueError("feature_noise_sigma must be > 0")

    def resolved_background_centroid(self) -> np.ndarray:
        """Background centroid; defaults to the last coordinate axis."""
        if self.background_centroid is not None:
            return np.asarray(self.background_centroid, dtype=np.float64)
        centroid = np.zeros(self.feature_dim)
        centroid[-1] = 1.0
        return centroid


@dataclass(frozen=True)
class ObjectInstance:
    box: Box
    class_id: int
    feature: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "feature", np.asarray(self.feature, dtype=np.float64))


@dataclass(frozen=True)
class Scene:
    scene_id: int
    objects: tuple[ObjectInstance, ...]


@dataclass(frozen=True)
class ClassPartition:
    """Disjoint head/tail split covering every foreground class."""

    head_classes: frozenset[int]
    tail_classes: frozenset[int]

    def __post_init__(self):
        if not self.head_classes or not self.tail_classes:
            raise ValueError("head and tail groups must both be non-empty")
        if self.head_classes & self.tail_classes:
            raise ValueError("head and tail groups overlap")

    @property
    def num_classes(self) -> int:
        return len(self.head_classes) + len(self.tail_classes)


def partition_from_specs(specs: list[ClassSpec]) -> ClassPartition:
    return ClassPartition(
        head_classes=frozenset(s.class_id for s in specs if s.group == GROUP_HEAD),
        tail_classes=frozenset(s.class_id for s in specs if s.group == GROUP_TAIL),
    )


def default_visdrone_spec(feature_dim: int | None = None) -> list[ClassSpec]:
    """Ten classes with the VisDrone long-tail mix, re-normalized to sum to 1.

    Centroids are unit one-hot directions in feature_dim dimensions
    (default: number of classes + 1, reserving the last axis for background).
    """
    names = list(VISDRONE_PROPORTIONS_PCT)
    if feature_dim is None:
        feature_dim = len(names) + 1
    if feature_dim < len(names) + 1:
        raise ValueError("feature_dim must be at least num_classes + 1")
    total = sum(VISDRONE_PROPORTIONS_PCT.values())
    specs = []
    for cid, name in enumerate(names):
        centroid = [0.0] * feature_dim
        centroid[cid] = 1.0
        specs.append(
            ClassSpec(
                class_id=cid,
                name=name,
                proportion=VISDRONE_PROPORTIONS_PCT[name] / total,
                group=GROUP_HEAD if name in VISDRONE_HEAD_CLASSES else GROUP_TAIL,
                feature_centroid=tuple(centroid),
            )
        )
    return specs


def validate_specs(specs: list[ClassSpec], config: SceneConfig) -> None:
    if abs(sum(s.proportion for s in specs) - 1.0) > 1e-9:
        raise ValueError("class proportions must sum to 1")
    centroids = [s.feature_centroid for s in specs]
    if len(set(centroids)) != len(centroids):
        raise ValueError("feature centroids must be pairwise distinct")
    for s in specs:
        if len(s.feature_centroid) != config.feature_dim:
            raise ValueError(
                f"centroid of class {s.name} has dim {len(s.feature_centroid)}, "
                f"config says {config.feature_dim}"
            )
    if len(config.resolved_background_centroid()) != config.feature_dim:
        raise ValueError("background centroid dim mismatch")


def _scene_rng(seed: int, scene_id: int, stream: int) -> np.random.Generator:
    # separate substream per (scene, purpose) so generation order never matters
    return np.random.default_rng([seed, scene_id, stream])


def generate_scene(specs: list[ClassSpec], config: SceneConfig, scene_id: int) -> Scene:
    rng = _scene_rng(config.seed, scene_id, 0)
    lo, hi = config.objects_per_scene
    count = int(rng.integers(lo, hi + 1))
    proportions = np.array([s.proportion for s in specs])
    proportions = proportions / proportions.sum()
    centroids = np.array([s.feature_centroid for s in specs])
    width, height = config.scene_extent
    smin, smax = config.object_size
    objects = []
    for _ in range(count):
        cid = int(rng.choice(len(specs), p=proportions))
        w = rng.uniform(smin, smax)
        h = rng.uniform(smin, smax)
        x1 = rng.uniform(0.0, width - w)
        y1 = rng.uniform(0.0, height - h)
        feature = centroids[cid] + rng.normal(0.0, config.feature_noise_sigma, config.feature_dim)
        objects.append(ObjectInstance(Box(x1, y1, x1 + w, y1 + h), cid, feature))
    return Scene(scene_id=scene_id, objects=tuple(objects))


def generate_dataset(specs: list[ClassSpec], config: SceneConfig) -> list[Scene]:
    """Deterministic dataset: scene i depends only on (config.seed, i)."""
    validate_specs(specs, config)
    return [generate_scene(specs, config, sid) for sid in range(config.num_scenes)]


_MIN_PROPOSAL_SIDE = 1e-3


def _clip_box(x1: float, y1: float, x2: float, y2: float, extent: tuple[float, float]) -> Box:
    """Restore validity after jitter: order corners, clip to the extent, and
    keep a tiny minimum side so downstream delta decoding stays defined."""
    width, height = extent
    x1, x2 = sorted((min(max(x1, 0.0), width), min(max(x2, 0.0), width)))
    y1, y2 = sorted((min(max(y1, 0.0), height), min(max(y2, 0.0), height)))
    if x2 - x1 < _MIN_PROPOSAL_SIDE:
        x2 = min(x1 + _MIN_PROPOSAL_SIDE, width)
        x1 = x2 - _MIN_PROPOSAL_SIDE
    if y2 - y1 < _MIN_PROPOSAL_SIDE:
        y2 = min(y1 + _MIN_PROPOSAL_SIDE, height)
        y1 = y2 - _MIN_PROPOSAL_SIDE
    return Box(x1, y1, x2, y2)


def _clip_boxes(corners: np.ndarray, extent: tuple[float, float]) -> list[Box]:
    """Vectorized _clip_box over an (N, 4) corner array."""
    width, height = extent
    x = np.sort(np.clip(corners[:, (0, 2)], 0.0, width), axis=1)
    y = np.sort(np.clip(corners[:, (1, 3)], 0.0, height), axis=1)
    for axis, limit in ((x, width), (y, height)):
        thin = axis[:, 1] - axis[:, 0] < _MIN_PROPOSAL_SIDE
        axis[thin, 1] = np.minimum(axis[thin, 0] + _MIN_PROPOSAL_SIDE, limit)
        axis[thin, 0] = axis[thin, 1] - _MIN_PROPOSAL_SIDE
    return [Box(x[i, 0], y[i, 0], x[i, 1], y[i, 1]) for i in range(len(corners))]


def generate_proposals(
    scene: Scene,
    config: SceneConfig,
    rng: np.random.Generator,
    jitter_sigma: float = 1.5,
    num_background: int = 128,
    k_pos: int = 4,
) -> list[tuple[Box, np.ndarray]]:
    """Simulated proposal boxes with features for one scene.

    Each ground-truth object yields k_pos copies whose corners are perturbed
    by N(0, jitter_sigma^2) (clipped back into the extent) and whose features
    are the object feature plus fresh noise. num_background boxes are placed
    uniformly and carry the background centroid plus noise. With
    jitter_sigma = 0 the positive boxes equal their source boxes exactly.
    """
    if jitter_sigma < 0.0:
        raise ValueError("jitter_sigma must be >= 0")
    if k_pos < 0 or num_background < 0:
        raise ValueError("k_pos and num_background must be >= 0")
    width, height = config.scene_extent
    bg_centroid = config.resolved_background_centroid()
    sigma = config.feature_noise_sigma
    proposals: list[tuple[Box, np.ndarray]] = []
    n_obj = len(scene.objects)
    if n_obj and k_pos:
        corners = np.repeat(
            np.array([o.box.as_array() for o in scene.objects]), k_pos, axis=0
        )
        if jitter_sigma > 0.0:
            corners = corners + rng.normal(0.0, jitter_sigma, corners.shape)
            boxes = _clip_boxes(corners, config.scene_extent)
        else:
            boxes = [o.box for o in scene.objects for _ in range(k_pos)]
        base = np.repeat(np.array([o.feature for o in scene.objects]), k_pos, axis=0)
        feats = base + rng.normal(0.0, sigma, (n_obj * k_pos, config.feature_dim))
        proposals.extend(zip(boxes, feats))
    if num_background:
        smin, smax = config.object_size
        wh = rng.uniform(smin, smax, (num_background, 2))
        x1 = rng.uniform(0.0, 1.0, num_background) * (width - wh[:, 0])
        y1 = rng.uniform(0.0, 1.0, num_background) * (height - wh[:, 1])
        feats = bg_centroid + rng.normal(0.0, sigma, (num_background, config.feature_dim))
        for i in range(num_background):
            box = Box(x1[i], y1[i], x1[i] + wh[i, 0], y1[i] + wh[i, 1])
            proposals.append((box, feats[i]))
    return proposals


# ---------------------------------------------------------------------------
# Dataset file format: a JSON manifest line followed by one JSON scene record
# per line.


def specs_to_json(specs: list[ClassSpec]) -> list[dict]:
    return [
        {
            "class_id": s.class_id,
            "name": s.name,
            "proportion": s.proportion,
            "group": s.group,
            "feature_centroid": list(s.feature_centroid),
        }
        for s in specs
    ]


def specs_from_json(items: list[dict]) -> list[ClassSpec]:
    return [
        ClassSpec(
            class_id=item["class_id"],
            name=item["name"],
            proportion=item["proportion"],
            group=item["group"],
            feature_centroid=tuple(item["feature_centroid"]),
        )
        for item in items
    ]


def config_to_json(config: SceneConfig) -> dict:
    return {
        "num_scenes": config.num_scenes,
        "objects_per_scene": list(config.objects_per_scene),
        "scene_extent": list(config.scene_extent),
        "object_size": list(config.object_size),
        "feature_dim": config.feature_dim,
        "feature_noise_sigma": config.feature_noise_sigma,
        "background_centroid": (
            None if config.background_centroid is None else list(config.background_centroid)
        ),
        "seed": config.seed,
    }


def config_from_json(data: dict) -> SceneConfig:
    return SceneConfig(
        num_scenes=data["num_scenes"],
        objects_per_scene=tuple(data["objects_per_scene"]),
        scene_extent=tuple(data["scene_extent"]),
        object_size=tuple(data["object_size"]),
        feature_dim=data["feature_dim"],
        feature_noise_sigma=data["feature_noise_sigma"],
        background_centroid=(
            None
            if data.get("background_centroid") is None
            else tuple(data["background_centroid"])
        ),
        seed=data["seed"],
    )


def write_dataset(path: str, scenes: list[Scene], specs: list[ClassSpec], config: SceneConfig) -> None:
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "specs": specs_to_json(specs),
        "config": config_to_json(config),
        "seed": config.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True) + "\n")
        for scene in scenes:
            record = {
                "scene_id": scene.scene_id,
                "objects": [
                    {
                        "box": [obj.box.x1, obj.box.y1, obj.box.x2, obj.box.y2],
                        "class_id": obj.class_id,
                        "feature": obj.feature.tolist(),
                    }
                    for obj in scene.objects
                ],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


class DatasetFormatError(ValueError):
    """Raised with a 1-based line number when a dataset file cannot be parsed."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def read_dataset(path: str) -> tuple[list[Scene], list[ClassSpec], SceneConfig]:
    scenes: list[Scene] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(1, "empty file, expected manifest")
    try:
        manifest = json.loads(lines[0])
        if manifest["format_version"] != DATASET_FORMAT_VERSION:
            raise DatasetFormatError(
                1, f"unsupported format version {manifest['format_version']}"
            )
        specs = specs_from_json(manifest["specs"])
        config = config_from_json(manifest["config"])
    except DatasetFormatError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(1, f"bad manifest: {exc}") from exc
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            objects = tuple(
                ObjectInstance(
                    box=Box(*record_obj["box"]),
                    class_id=record_obj["class_id"],
                    feature=np.array(record_obj["feature"], dtype=np.float64),
                )
                for record_obj in record["objects"]
            )
            scenes.append(Scene(scene_id=record["scene_id"], objects=objects))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(lineno, f"bad scene record: {exc}") from exc
    return scenes, specs, config
