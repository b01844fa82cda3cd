"""
Seeded synthetic correspondence-retrieval tasks.

Every task is a pool of (visual, audio) pairs, a known share of which
correspond. Features come as L layers per modality: layer l is a fixed
random linear view of the modality's base feature plus Gaussian noise of
scale noise_scale * (L - l + 1) / L, so higher layers are cleaner.

The kinetics preset draws clips with a wide class_spread, so classes overlap
and label flips grow gradually with noise in every layer rather than only in
the lowest ones. Tracks of non-corresponding pairs carry
negative_noise_factor times the noise of corresponding ones.
"""
from dataclasses import dataclass
from enum import Enum
import math
from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.base import BenchError
from src.store.feature_store import ClipRecord, MemoryStore
from src.utils.logger_config import logger

CENTER_SCALE = 3.0
WITHIN_CLASS_SCALE = 1.0
EASY_NOISE_DIVISOR = 10.0


class TaskKind(str, Enum):
    NATURAL_CLASS = "natural_class"
    ARBITRARY_CLASS = "arbitrary_class"
    SAMPLE_LEVEL = "sample_level"


class Transform(str, Enum):
    ROTATION = "rotation"
    FLIP = "flip"


class TaskSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: TaskKind = TaskKind.SAMPLE_LEVEL
    n_classes: int = Field(10, ge=2)
    per_class_cap: int = Field(1000, ge=1, description="Pairs per class in each split")
    positive_fraction: float = Field(0.5, gt=0, lt=1)
    visual_dim: int = Field(32, ge=1)
    audio_dim: int = Field(32, ge=1)
    n_layers: int = Field(5, ge=1)
    noise_scale: float = Field(0.5, ge=0)
    easy_fraction: float = Field(0.0, ge=0, le=1, description="Share of positives drawn with noise_scale / 10")
    class_spread: float = Field(WITHIN_CLASS_SCALE, gt=0, description="Within-class standard deviation of the latent")
    negative_noise_factor: float = Field(1.0, ge=1, description="Noise multiplier for the tracks of negative pairs")
    transform: Transform = Transform.ROTATION
    seed: int = 0

    @model_validator(mode="after")
    def _check_dims(self):
        if self.kind == TaskKind.NATURAL_CLASS and self.visual_dim != self.audio_dim:
            raise ValueError("natural_class tasks need equal visual and audio dims")
        return self

    @property
    def n_pairs(self) -> int:
        return self.n_classes * self.per_class_cap

    @property
    def n_positive(self) -> int:
        return math.ceil(self.positive_fraction * self.n_pairs)


PRESETS: Dict[str, dict] = {
    "rotation": {"kind": TaskKind.NATURAL_CLASS, "n_classes": 10, "transform": Transform.ROTATION},
    "flip": {"kind": TaskKind.NATURAL_CLASS, "n_classes": 10, "transform": Transform.FLIP},
    "mnist_cifar": {"kind": TaskKind.ARBITRARY_CLASS, "n_classes": 10, "visual_dim": 48, "audio_dim": 24},
    "mnist_fsdd": {"kind": TaskKind.ARBITRARY_CLASS, "n_classes": 10, "visual_dim": 48, "audio_dim": 16},
    "kinetics": {
        "kind": TaskKind.SAMPLE_LEVEL,
        "n_classes": 32,
        "class_spread": 4.0,
        "negative_noise_factor": 2.0,
    },
}


def preset(name: str, **overrides) -> TaskSpec:
    if name not in PRESETS:
        raise BenchError(f"unknown task preset {name!r}; available: {sorted(PRESETS)}")
    return TaskSpec(**{**PRESETS[name], **overrides})


@dataclass
class TaskSplit:
    store: MemoryStore
    positives: np.ndarray
    visual_labels: np.ndarray
    audio_labels: np.ndarray

    def __len__(self):
        return len(self.positives)


@dataclass
class GeneratedTask:
    spec: TaskSpec
    train: TaskSplit
    test: TaskSplit
    class_map: Optional[np.ndarray] = None


@dataclass
class _Structure:
    visual_centers: np.ndarray
    audio_centers: np.ndarray
    audio_map: np.ndarray
    class_map: np.ndarray
    visual_views: list
    audio_views: list


def _orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _structure(spec: TaskSpec, rng: np.random.Generator) -> _Structure:
    k, dv, da = spec.n_classes, spec.visual_dim, spec.audio_dim
    visual_centers = CENTER_SCALE * rng.standard_normal((k, dv))

    if spec.kind == TaskKind.NATURAL_CLASS:
        audio_centers = visual_centers
        if spec.transform == Transform.ROTATION:
            audio_map = _orthogonal(rng, dv)
        else:
            audio_map = np.diag(np.where(rng.random(dv) < 0.5, -1.0, 1.0))[::-1]
        class_map = np.arange(k)
    elif spec.kind == TaskKind.ARBITRARY_CLASS:
        audio_centers = CENTER_SCALE * rng.standard_normal((k, da))
        audio_map = np.eye(da)
        class_map = rng.permutation(k)
    else:
        audio_centers = visual_centers
        audio_map = rng.standard_normal((da, dv)) / math.sqrt(dv)
        class_map = np.arange(k)

    def views(dim: int):
        return [rng.standard_normal((dim, dim)) / math.sqrt(dim) for _ in range(spec.n_layers)]

    return _Structure(visual_centers, audio_centers, audio_map, class_map, views(dv), views(da))


def _cross_class_derangement(rng: np.random.Generator, labels: np.ndarray) -> np.ndarray:
    """
    Permutation p of range(len(labels)) with p[i] != i and, whenever no class
    holds more than half of the rows, labels[p[i]] != labels[i].
    """
    n = len(labels)
    if n < 2:
        raise BenchError("sample-level negatives need at least two negative pairs")
    # Rows grouped by class in random class and row order; a cyclic shift by the
    # largest group size moves every row out of its own group.
    class_order = rng.permutation(int(labels.max()) + 1)
    order = np.lexsort((rng.random(n), class_order[labels]))
    largest = int(np.bincount(labels).max())
    shift = largest if 2 * largest <= n else max(1, n // 2)
    if 2 * largest > n:
        logger.debug(f"class with {largest} of {n} negatives; some negatives keep their own class")
    mapped = np.empty(n, dtype=np.int64)
    mapped[order] = order[(np.arange(n) + shift) % n]
    return mapped


def _layered(base: np.ndarray, views: list, noise: np.ndarray, rng: np.random.Generator, prefix: str) -> dict:
    n_layers = len(views)
    layers = {}
    for layer, view in enumerate(views, start=1):
        scale = noise * (n_layers - layer + 1) / n_layers
        layers[f"{prefix}_{layer}"] = base @ view.T + scale[:, None] * rng.standard_normal(base.shape)
    return layers


def _split(spec: TaskSpec, structure: _Structure, rng: np.random.Generator, name: str) -> TaskSplit:
    n, k = spec.n_pairs, spec.n_classes
    n_pos = spec.n_positive
    positives = np.zeros(n, dtype=bool)
    positives[rng.permutation(n)[:n_pos]] = True
    visual_labels = rng.permutation(np.arange(n) % k)

    visual_base = structure.visual_centers[visual_labels] + spec.class_spread * rng.standard_normal((n, spec.visual_dim))

    if spec.kind == TaskKind.SAMPLE_LEVEL:
        # Negatives take the audio of a negative pair from another class.
        source = np.arange(n)
        negatives = np.flatnonzero(~positives)
        source[negatives] = negatives[_cross_class_derangement(rng, visual_labels[negatives])]
        audio_labels = visual_labels[source]
        audio_base = visual_base[source] @ structure.audio_map.T
    else:
        matched = structure.class_map[visual_labels]
        offsets = rng.integers(1, k, size=n)
        audio_labels = np.where(positives, matched, (matched + offsets) % k)
        audio_latent = structure.audio_centers[audio_labels] + spec.class_spread * rng.standard_normal((n, spec.audio_dim))
        audio_base = audio_latent @ structure.audio_map.T

    noise = np.where(positives, spec.noise_scale, spec.noise_scale * spec.negative_noise_factor)
    if spec.easy_fraction > 0:
        pos_rows = np.flatnonzero(positives)
        n_easy = int(round(spec.easy_fraction * len(pos_rows)))
        noise[rng.choice(pos_rows, size=n_easy, replace=False)] /= EASY_NOISE_DIVISOR

    features = {}
    features.update(_layered(audio_base, structure.audio_views, noise, rng, "audio"))
    features.update(_layered(visual_base, structure.visual_views, noise, rng, "visual"))
    records = [
        ClipRecord(clip_id=f"{name}-{i:07d}", source_id=f"{name}-{i:07d}", duration_s=10.0)
        for i in range(n)
    ]
    return TaskSplit(
        store=MemoryStore(records, features),
        positives=positives,
        visual_labels=visual_labels,
        audio_labels=audio_labels,
    )


def generate_task(spec: TaskSpec) -> GeneratedTask:
    """
    Build equal-size train and test splits for ``spec``. The class centers,
    modality maps and layer views are shared by both splits.
    """
    structure_seq, train_seq, test_seq = np.random.SeedSequence(spec.seed).spawn(3)
    structure = _structure(spec, np.random.default_rng(structure_seq))
    train = _split(spec, structure, np.random.default_rng(train_seq), "train")
    test = _split(spec, structure, np.random.default_rng(test_seq), "test")
    logger.debug(f"Generated {spec.kind.value} task: {spec.n_pairs} pairs per split, {spec.n_positive} positive")
    return GeneratedTask(spec=spec, train=train, test=test, class_map=structure.class_map)
