"""
Bench runner: registered retrieval methods, seeded repeated runs, precision
with a 99% normal-approximation interval, and ablation sweeps.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import json
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.base import BenchError
from src.clustering.assignment import build_assignment_table
from src.clustering.kmeans import KMeansConfig, fit_store_spaces
from src.contrastive.heads import TrainConfig, score_pairs, train_heads
from src.contrastive.pca import PCA_DIM, RankingMetric, fit_baseline_pcas, ranking_baseline
from src.mi.estimator import PairingScheme
from src.selection.greedy import SMALL_SCALE, SelectionConfig, batch_greedy, greedy, rank_select
from src.bench.tasks import GeneratedTask, TaskKind, TaskSpec, TaskSplit, generate_task
from src.utils.logger_config import logger
from src.utils.seeding import derive_seed

Z_99 = 2.576
ALL_METHODS = "all"


class BenchSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    runs: int = Field(5, ge=1)
    selection_fraction: float = Field(0.5, gt=0, le=1)
    batch_size: int = Field(SMALL_SCALE[0], ge=1)
    selection_size: int = Field(SMALL_SCALE[1], ge=1)
    pairing: str = "combination"
    layer_weights: str = "uniform"
    centroids: Optional[int] = Field(None, ge=1, description="Clusters per space; None uses the class count")
    clustering_alg: str = Field("sgd", pattern="^(sgd|lloyd)$")
    kmeans_epochs: int = Field(20, ge=1)
    kmeans_batch: int = Field(512, ge=1)
    kmeans_lr: float = Field(0.05, gt=0, le=1)
    contrastive_epochs: int = Field(100, ge=0)
    contrastive_batch: int = Field(10, ge=1)
    contrastive_lr: float = Field(2e-4, gt=0)
    stratified: bool = False
    pca_dim: int = Field(PCA_DIM, ge=1)
    workers: int = Field(1, ge=1)


@dataclass
class MethodOutcome:
    rows: np.ndarray
    # (selected count, precision) after each selection round
    curve: List[List[float]] = field(default_factory=list)


class MethodRegistry:
    _methods: Dict[str, Callable] = {}

    @classmethod
    def register(cls, name):
        def decorator(method):
            cls._methods[name] = method
            return method
        return decorator

    @classmethod
    def get_method(cls, name) -> Callable:
        if name not in cls._methods:
            raise BenchError(f"unknown method {name!r}; available: {cls.available_methods()}")
        return cls._methods[name]

    @classmethod
    def available_methods(cls) -> List[str]:
        return list(cls._methods.keys())

    @classmethod
    def resolve(cls, methods) -> List[str]:
        if isinstance(methods, str):
            methods = cls.available_methods() if methods == ALL_METHODS else [m.strip() for m in methods.split(",") if m.strip()]
        methods = list(methods)
        for name in methods:
            cls.get_method(name)
        return methods


def precision(positives: np.ndarray, rows) -> float:
    rows = np.asarray(rows, dtype=np.int64)
    if not rows.size:
        return 0.0
    return 100.0 * float(positives[rows].sum()) / len(rows)


def confidence_halfwidth(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    return float(Z_99 * values.std(ddof=1) / np.sqrt(len(values)))


def _ranking(metric: RankingMetric):
    def method(task: GeneratedTask, n_select: int, settings: BenchSettings, seed: int) -> MethodOutcome:
        store = task.test.store
        pcas = fit_baseline_pcas(store, _pca_dim(task, settings))
        scores = ranking_baseline(store, metric, pcas)
        return MethodOutcome(rows=rank_select(scores, n_select))
    return method


def _pca_dim(task: GeneratedTask, settings: BenchSettings) -> int:
    return min(settings.pca_dim, task.spec.visual_dim, task.spec.audio_dim)


MethodRegistry.register("ranking-inner")(_ranking(RankingMetric.INNER))
MethodRegistry.register("ranking-cos")(_ranking(RankingMetric.COSINE))
MethodRegistry.register("ranking-l2")(_ranking(RankingMetric.NEG_L2))


@MethodRegistry.register("contrastive")
def contrastive_method(task: GeneratedTask, n_select: int, settings: BenchSettings, seed: int) -> MethodOutcome:
    # Heads are trained on the train split only.
    config = TrainConfig(
        epochs=settings.contrastive_epochs,
        batch_size=settings.contrastive_batch,
        lr=settings.contrastive_lr,
        stratified=settings.stratified and task.spec.kind != TaskKind.SAMPLE_LEVEL,
        seed=derive_seed(seed, "contrastive"),
    )
    labels = task.train.visual_labels if config.stratified else None
    heads = train_heads(task.train.store, config, labels)
    scores = score_pairs(heads, task.test.store)
    return MethodOutcome(rows=rank_select(scores, n_select))


def _assignment_table(split: TaskSplit, spec: TaskSpec, settings: BenchSettings, seed: int):
    config = KMeansConfig(
        k=settings.centroids or spec.n_classes,
        lr=settings.kmeans_lr,
        epochs=settings.kmeans_epochs,
        batch_size=settings.kmeans_batch,
        seed=derive_seed(seed, "cluster"),
        algorithm=settings.clustering_alg,
    )
    clusterings = fit_store_spaces(split.store, config)
    return build_assignment_table(split.store, clusterings)


def _scheme(settings: BenchSettings, spec: TaskSpec) -> PairingScheme:
    return PairingScheme.parse(settings.pairing, settings.layer_weights, spec.n_layers)


def _curve(positives: np.ndarray, rows: List[int], round_sizes: List[int]) -> List[List[float]]:
    hits = np.cumsum(positives[np.asarray(rows, dtype=np.int64)]) if rows else np.zeros(0)
    return [[float(size), 100.0 * float(hits[size - 1]) / size] for size in round_sizes if size > 0]


@MethodRegistry.register("clustering")
def clustering_method(task: GeneratedTask, n_select: int, settings: BenchSettings, seed: int) -> MethodOutcome:
    table = _assignment_table(task.test, task.spec, settings, seed)
    config = SelectionConfig(
        target_size=n_select,
        batch_size=settings.batch_size,
        selection_size=min(settings.selection_size, settings.batch_size),
        seed=derive_seed(seed, "select"),
        scheme=_scheme(settings, task.spec),
    )
    result = batch_greedy(table, config)
    return MethodOutcome(rows=np.asarray(result.rows), curve=_curve(task.test.positives, result.rows, result.round_sizes))


@MethodRegistry.register("clustering-greedy")
def clustering_greedy_method(task: GeneratedTask, n_select: int, settings: BenchSettings, seed: int) -> MethodOutcome:
    table = _assignment_table(task.test, task.spec, settings, seed)
    result = greedy(table, n_select, _scheme(settings, task.spec))
    sizes = list(range(settings.selection_size, n_select, settings.selection_size)) + [n_select]
    return MethodOutcome(rows=np.asarray(result.rows), curve=_curve(task.test.positives, result.rows, sizes))


class MethodReport(BaseModel):
    precision: float
    ci99: float
    runs: List[float]
    curve: List[List[float]] = Field(default_factory=list)


class BenchReport(BaseModel):
    task: TaskSpec
    settings: BenchSettings
    selected: int
    methods: Dict[str, MethodReport]
    notes: List[str] = Field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"method": name, "precision": r.precision, "ci99": r.ci99} for name, r in self.methods.items()],
            columns=["method", "precision", "ci99"],
        )

    def to_text(self) -> str:
        header = f"task={self.task.kind.value} classes={self.task.n_classes} noise={self.task.noise_scale} runs={self.settings.runs}"
        return header + "\n" + self.to_frame().to_string(index=False, float_format=lambda v: f"{v:.3f}")

    def save(self, path):
        path = Path(path)
        path.write_text(self.model_dump_json(indent=2))
        path.with_suffix(".txt").write_text(self.to_text() + "\n")
        logger.info(f"Saved bench report to {path}")


def _run_once(spec: TaskSpec, run: int, methods: List[str], settings: BenchSettings):
    run_seed = derive_seed(spec.seed, f"run-{run}")
    task = generate_task(spec.model_copy(update={"seed": run_seed}))
    n_select = int(np.floor(settings.selection_fraction * len(task.test)))
    if n_select < 1:
        raise BenchError("selection_fraction selects no items")

    results = {}
    for name in methods:
        outcome = MethodRegistry.get_method(name)(task, n_select, settings, run_seed)
        results[name] = (precision(task.test.positives, outcome.rows), outcome.curve)
        logger.info(f"Run {run + 1}/{settings.runs} {name}: precision {results[name][0]:.3f}")
    return n_select, results


def run_bench(spec: TaskSpec, methods="all", settings: Optional[BenchSettings] = None) -> BenchReport:
    """
    Run every method on ``settings.runs`` seeded draws of the task and report
    mean precision with its 99% interval half-width.
    """
    settings = settings or BenchSettings()
    methods = MethodRegistry.resolve(methods)
    if not methods:
        raise BenchError("no methods requested")

    with ThreadPoolExecutor(max_workers=settings.workers) as executor:
        outcomes = list(executor.map(lambda r: _run_once(spec, r, methods, settings), range(settings.runs)))

    reports = {}
    for name in methods:
        values = [results[name][0] for _, results in outcomes]
        reports[name] = MethodReport(
            precision=float(np.mean(values)),
            ci99=confidence_halfwidth(values),
            runs=values,
            curve=outcomes[0][1][name][1],
        )

    notes = []
    if any(m.startswith("clustering") for m in methods):
        notes.append("clustering centroids are fitted on the test split")
    return BenchReport(task=spec, settings=settings, selected=outcomes[0][0], methods=reports, notes=notes)


class AblationAxis(str, Enum):
    PAIRING = "pairing"
    SB_RATIO = "sb_ratio"
    CENTROIDS = "centroids"
    CLUSTERING_ALG = "clustering_alg"
    LAYER_WEIGHTS = "layer_weights"
    SINGLE_LAYER = "single_layer"


def _grid_settings(axis: AblationAxis, value, settings: BenchSettings) -> BenchSettings:
    if axis == AblationAxis.PAIRING:
        return settings.model_copy(update={"pairing": str(value)})
    if axis == AblationAxis.SB_RATIO:
        return settings.model_copy(update={"selection_size": int(value)})
    if axis == AblationAxis.CENTROIDS:
        return settings.model_copy(update={"centroids": int(value)})
    if axis == AblationAxis.CLUSTERING_ALG:
        return settings.model_copy(update={"clustering_alg": str(value)})
    if axis == AblationAxis.LAYER_WEIGHTS:
        return settings.model_copy(update={"layer_weights": str(value)})
    return settings.model_copy(update={"pairing": f"single({int(value)})"})


@dataclass
class AblationResult:
    axis: AblationAxis
    points: List[tuple]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for value, report in self.points:
            for name, method in report.methods.items():
                rows.append({self.axis.value: value, "method": name, "precision": method.precision, "ci99": method.ci99})
        return pd.DataFrame(rows, columns=[self.axis.value, "method", "precision", "ci99"])

    def save(self, path):
        path = Path(path)
        self.to_frame().to_csv(path, sep="\t", index=False, lineterminator="\n")
        payload = {
            "axis": self.axis.value,
            "points": [{"value": value, "report": report.model_dump(mode="json")} for value, report in self.points],
        }
        path.with_suffix(".json").write_text(json.dumps(payload, indent=2))
        logger.info(f"Saved {self.axis.value} ablation with {len(self.points)} points to {path}")


def ablate(spec: TaskSpec, axis, grid: Iterable, methods="clustering", settings: Optional[BenchSettings] = None) -> AblationResult:
    """
    One bench report per grid value. Every point reuses the same task seeds,
    so the comparison across the grid is paired.
    """
    axis = AblationAxis(axis)
    settings = settings or BenchSettings()
    grid = list(grid)
    if not grid:
        raise BenchError("empty ablation grid")

    points = []
    for value in grid:
        local = _grid_settings(axis, value, settings)
        if axis == AblationAxis.SB_RATIO and local.selection_size > local.batch_size:
            raise BenchError(f"s={local.selection_size} exceeds b={local.batch_size}")
        logger.info(f"Ablation {axis.value}={value}")
        points.append((value, run_bench(spec, methods, local)))
    return AblationResult(axis=axis, points=points)
