"""
End-to-end curation run and the selection report.

``run_pipeline`` chains filter -> dedup -> cluster -> assign -> select (or
train-heads -> rank) and records a provenance file that is enough to
reproduce the run. The stage helpers below are shared with the CLI stages,
so a stage-by-stage run produces the same artifacts.
"""
from importlib import metadata as importlib_metadata
import json
from pathlib import Path
import time
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.stats import chi2_contingency

from src.base import SelectionError, StageError
from src.clustering.assignment import AssignmentTable, build_assignment_table, save_clusterings
from src.clustering.kmeans import fit_store_spaces
from src.config import PipelineConfig, SelectSection
from src.contrastive.heads import save_heads, score_pairs, train_heads
from src.filters.dedup import SimilarityMatrix, dedup_sources
from src.filters.metadata import FilterPolicy, decisions_frame, filter_metadata
from src.mi.estimator import PairingScheme, cluster_histogram
from src.selection.greedy import SelectionConfig, SelectionResult, batch_greedy, greedy, rank_select
from src.store.feature_store import BaseStore, FeatureStore
from src.utils.logger_config import logger
from src.utils.seeding import derive_seed

PROVENANCE_FILE = "provenance.json"
TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "pydantic", "torch")
TOP_CLUSTERS = 10


def write_id_list(path, clip_ids: Iterable[str]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for clip_id in clip_ids:
            fh.write(f"{clip_id}\n")


def read_id_list(path) -> List[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def run_filter(records, policy: FilterPolicy, workers: int = 1):
    """Decision table plus the accepted clip IDs in input order."""
    frame = decisions_frame(filter_metadata(records, policy, workers))
    accepted = frame.loc[frame["accepted"].astype(bool), "clip_id"].tolist() if not frame.empty else []
    return frame, accepted


def load_similarity_matrices(directory, source_ids: Iterable[str]) -> Dict[str, SimilarityMatrix]:
    directory = Path(directory)
    matrices = {}
    for source_id in sorted(set(source_ids)):
        path = directory / f"{source_id}.txt"
        if path.exists():
            matrices[source_id] = SimilarityMatrix.from_file(path)
    return matrices


def run_dedup(store: BaseStore, clip_ids: Sequence[str], similarity_dir, k: int = 3, max_iters: int = 100) -> List[str]:
    """
    Keep at most k clips per source video. Matrices are indexed by the
    accepted clips of that source, in store order.
    """
    by_id = {r.clip_id: r for r in store.records()}
    sources = [by_id[cid].source_id for cid in clip_ids]
    matrices = load_similarity_matrices(similarity_dir, sources)
    return dedup_sources(clip_ids, sources, matrices, k=k, max_iters=max_iters)


def restrict_store(store: BaseStore, clip_ids: Optional[Sequence[str]]) -> BaseStore:
    if clip_ids is None or len(clip_ids) == len(store):
        return store
    rows = np.sort(store.indices_of(clip_ids))
    return store.subset(rows)


def run_selection(table: AssignmentTable, section: SelectSection, seed: int, workers: int = 1) -> SelectionResult:
    scheme = PairingScheme.parse(section.pairing, section.layer_weights, _layer_count(table))
    if section.plain_greedy:
        return greedy(table, section.target_size, scheme, workers)
    config = SelectionConfig(
        target_size=section.target_size,
        batch_size=section.batch_size,
        selection_size=section.selection_size,
        seed=seed,
        scheme=scheme,
    )
    return batch_greedy(table, config, workers)


def _layer_count(table: AssignmentTable) -> int:
    return max((space.layer for space in table.spaces), default=1)


def save_selection(result: SelectionResult, out_dir, config_echo: Optional[dict] = None) -> List[Path]:
    out_dir = Path(out_dir)
    ids_path = out_dir / "selected.txt"
    report_path = out_dir / "selection_report.json"
    write_id_list(ids_path, result.chosen)
    payload = result.report()
    payload["config"] = config_echo
    report_path.write_text(json.dumps(payload, indent=2))
    return [ids_path, report_path]


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = importlib_metadata.version(name)
        except importlib_metadata.PackageNotFoundError:
            versions[name] = "missing"
    return versions


class StageRecord(BaseModel):
    name: str
    seed: int
    status: str = "pending"
    wall_seconds: float = 0.0
    artifacts: List[str] = Field(default_factory=list)


class Provenance(BaseModel):
    config_hash: str
    config: dict
    global_seed: int
    versions: Dict[str, str]
    stages: List[StageRecord] = Field(default_factory=list)
    complete: bool = False

    @property
    def artifacts(self) -> List[str]:
        return [a for stage in self.stages for a in stage.artifacts]

    def save(self, out_dir):
        path = Path(out_dir) / PROVENANCE_FILE
        payload = self.model_dump(mode="json")
        payload["artifacts"] = self.artifacts
        path.write_text(json.dumps(payload, indent=2))
        return path


class _StageRunner:
    def __init__(self, provenance: Provenance, out_dir: Path):
        self.provenance = provenance
        self.out_dir = out_dir

    def run(self, name: str, fn, expected: Sequence[str] = ()):
        seed = derive_seed(self.provenance.global_seed, name)
        record = StageRecord(name=name, seed=seed, status="running")
        self.provenance.stages.append(record)
        logger.info(f"[{name}] starting")
        start = time.perf_counter()
        try:
            paths, value = fn(seed)
            record.artifacts = [str(p) for p in paths]
            record.status = "ok"
            for artifact in expected:
                stale = self.out_dir / f"{artifact}.incomplete"
                if stale.exists():
                    stale.unlink()
            return value
        except Exception as e:
            record.status = "failed"
            logger.error(f"[{name}] failed: {e}")
            for artifact in expected:
                path = self.out_dir / artifact
                if path.exists():
                    path.with_name(path.name + ".incomplete").write_text(f"{name}\n")
                    logger.warning(f"[{name}] marked {path} as incomplete")
            raise StageError(name, e) from e
        finally:
            record.wall_seconds = time.perf_counter() - start
            self.provenance.save(self.out_dir)


def run_pipeline(config: PipelineConfig) -> Provenance:
    config.check_paths()
    out_dir = Path(config.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    provenance = Provenance(
        config_hash=config.config_hash(),
        config=config.model_dump(mode="json"),
        global_seed=config.seed,
        versions=package_versions(),
    )
    runner = _StageRunner(provenance, out_dir)
    store = FeatureStore(config.paths.store)
    workers = config.workers

    def filter_stage(seed):
        frame, accepted = run_filter(store.records(), config.filter, workers)
        path = out_dir / "filter_decisions.tsv"
        frame.to_csv(path, sep="\t", index=False, lineterminator="\n")
        return [path], accepted

    kept = runner.run("filter", filter_stage, ["filter_decisions.tsv"])

    if config.dedup.enabled:
        def dedup_stage(seed):
            ids = run_dedup(store, kept, config.paths.similarity_dir, config.dedup.k, config.dedup.max_iters)
            path = out_dir / "dedup_kept.txt"
            write_id_list(path, ids)
            return [path], ids

        kept = runner.run("dedup", dedup_stage, ["dedup_kept.txt"])

    work = restrict_store(store, kept)
    logger.info(f"{len(work)} of {len(store)} clips enter selection")

    if config.select.method == "contrastive":
        def train_stage(seed):
            heads = train_heads(work, config.train.model_copy(update={"seed": seed}))
            path = out_dir / "heads.pt"
            save_heads(heads, path)
            return [path], heads

        heads = runner.run("train-heads", train_stage, ["heads.pt"])

        def rank_stage(seed):
            scores = score_pairs(heads, work)
            rows = rank_select(scores, config.select.target_size)
            scores_path = out_dir / "scores.tsv"
            pd.DataFrame({"clip_id": work.clip_ids, "score": scores}).to_csv(scores_path, sep="\t", index=False, lineterminator="\n")
            ids_path = out_dir / "selected.txt"
            write_id_list(ids_path, [work.clip_ids[i] for i in rows])
            return [scores_path, ids_path], rows

        runner.run("rank", rank_stage, ["scores.tsv", "selected.txt"])
    else:
        def cluster_stage(seed):
            clusterings = fit_store_spaces(work, config.cluster.model_copy(update={"seed": seed}), workers=workers)
            directory = out_dir / "clusterings"
            save_clusterings(clusterings, directory)
            return [directory], clusterings

        clusterings = runner.run("cluster", cluster_stage, ["clusterings"])

        def assign_stage(seed):
            table = build_assignment_table(work, clusterings)
            path = out_dir / "assignments.tsv"
            table.save(path)
            return [path], table

        table = runner.run("assign", assign_stage, ["assignments.tsv"])

        def select_stage(seed):
            result = run_selection(table, config.select, seed, workers)
            return save_selection(result, out_dir, config.select.model_dump(mode="json")), result

        runner.run("select", select_stage, ["selected.txt", "selection_report.json"])

    provenance.complete = True
    provenance.save(out_dir)
    logger.info(f"Pipeline finished; provenance in {out_dir / PROVENANCE_FILE}")
    return provenance


class SpaceDiagnostic(BaseModel):
    space: str
    chi2: float
    p_value: float
    top10_selected: float
    top10_random: float


class SelectionDiagnostics(BaseModel):
    selected: int
    spaces: List[SpaceDiagnostic] = Field(default_factory=list)
    objective_curve: List[float] = Field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [s.model_dump() for s in self.spaces],
            columns=["space", "chi2", "p_value", "top10_selected", "top10_random"],
        )


def _top_share(histogram: pd.DataFrame) -> float:
    total = histogram["count"].sum()
    return float(histogram["count"].head(TOP_CLUSTERS).sum() / total) if total else 0.0


def _chi_square(selected: np.ndarray, random: np.ndarray):
    observed = np.vstack([selected, random])
    observed = observed[:, observed.sum(axis=0) > 0]
    if observed.shape[1] < 2 or observed.sum() == 0:
        return 0.0, 1.0
    statistic, p_value, _, _ = chi2_contingency(observed, correction=False)
    return float(statistic), float(p_value)


def report(
    selected_ids: Sequence[str],
    table: AssignmentTable,
    out_dir,
    seed: int = 0,
    objective_curve: Optional[Sequence[float]] = None,
) -> SelectionDiagnostics:
    """
    Compare the cluster-ID histograms of the selection with those of an
    equal-size uniform random subset, per space.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = SelectionDiagnostics(selected=len(selected_ids), objective_curve=list(objective_curve or []))
    histograms = []

    if selected_ids:
        rows = table.rows_of(selected_ids)
        rng = np.random.default_rng(derive_seed(seed, "report"))
        random_rows = np.sort(rng.choice(len(table), size=len(rows), replace=False))
        for space in table.spaces:
            chosen = cluster_histogram(table, space, rows)
            baseline = cluster_histogram(table, space, random_rows)
            merged = chosen.merge(baseline, on="cluster_id", suffixes=("_selected", "_random")).sort_values("cluster_id")
            statistic, p_value = _chi_square(merged["count_selected"].to_numpy(), merged["count_random"].to_numpy())
            summary.spaces.append(SpaceDiagnostic(
                space=space.name,
                chi2=statistic,
                p_value=p_value,
                top10_selected=_top_share(chosen),
                top10_random=_top_share(baseline),
            ))
            merged.insert(0, "space", space.name)
            histograms.append(merged.rename(columns={"count_selected": "selected", "count_random": "random"}))

    frame = pd.concat(histograms, ignore_index=True) if histograms else pd.DataFrame(columns=["space", "cluster_id", "selected", "random"])
    frame.to_csv(out_dir / "histograms.tsv", sep="\t", index=False, lineterminator="\n")
    (out_dir / "report.json").write_text(summary.model_dump_json(indent=2))

    text = [f"selected clips: {summary.selected}"]
    if summary.spaces:
        text.append(summary.to_frame().to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    if summary.objective_curve:
        text.append(f"objective: {summary.objective_curve[0]:.6f} -> {summary.objective_curve[-1]:.6f} over {len(summary.objective_curve)} steps")
    (out_dir / "report.txt").write_text("\n".join(text) + "\n")
    logger.info(f"Report for {summary.selected} selected clips written to {out_dir}")
    return summary


def report_from_files(selection_path, assignments_path, out_dir, seed: int = 0, selection_report=None) -> SelectionDiagnostics:
    for path in (selection_path, assignments_path):
        if not Path(path).exists():
            raise SelectionError(f"report input {path} does not exist")
    curve = None
    if selection_report is not None and Path(selection_report).exists():
        curve = json.loads(Path(selection_report).read_text()).get("step_scores")
    return report(read_id_list(selection_path), AssignmentTable.load(assignments_path), out_dir, seed, curve)
