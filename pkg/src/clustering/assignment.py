from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd

from src.base import ClusteringError
from src.clustering.kmeans import Clustering, assign, load_clustering, save_clustering
from src.store.feature_store import BaseStore, LayerKey
from src.utils.logger_config import logger


@dataclass
class AssignmentTable:
    """
    Vector-quantised cluster IDs: one row per clip, one column per space.
    """
    clip_ids: List[str]
    spaces: List[LayerKey]
    cardinalities: List[int]
    ids: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(len(self.clip_ids), len(self.spaces))
        if len(self.cardinalities) != len(self.spaces):
            raise ClusteringError("one cardinality per space is required")
        if len(set(self.clip_ids)) != len(self.clip_ids):
            raise ClusteringError("duplicate clip_id in assignment table")
        for column, (space, k) in enumerate(zip(self.spaces, self.cardinalities)):
            values = self.ids[:, column]
            if values.size and (values.min() < 0 or values.max() >= k):
                raise ClusteringError(f"cluster id outside [0, {k}) in space {space.name}")

    def __len__(self):
        return len(self.clip_ids)

    def column_of(self, space) -> int:
        space = LayerKey.parse(space)
        try:
            return self.spaces.index(space)
        except ValueError:
            raise ClusteringError(f"space {space.name} is not in the assignment table") from None

    def rows_of(self, clip_ids: Sequence[str]) -> np.ndarray:
        lookup = {cid: i for i, cid in enumerate(self.clip_ids)}
        missing = [cid for cid in clip_ids if cid not in lookup]
        if missing:
            raise ClusteringError(f"unknown clip_id(s): {missing[:5]}")
        return np.array([lookup[cid] for cid in clip_ids], dtype=np.int64)

    def subset(self, rows) -> "AssignmentTable":
        rows = np.asarray(rows, dtype=np.int64)
        return AssignmentTable(
            clip_ids=[self.clip_ids[i] for i in rows],
            spaces=list(self.spaces),
            cardinalities=list(self.cardinalities),
            ids=self.ids[rows],
        )

    def to_frame(self) -> pd.DataFrame:
        columns = [f"{space.name}:{k}" for space, k in zip(self.spaces, self.cardinalities)]
        frame = pd.DataFrame(self.ids, columns=columns)
        frame.insert(0, "clip_id", self.clip_ids)
        return frame

    def save(self, path):
        self.to_frame().to_csv(path, sep="\t", index=False, lineterminator="\n")
        logger.info(f"Saved assignment table with {len(self)} rows to {path}")

    @classmethod
    def load(cls, path) -> "AssignmentTable":
        frame = pd.read_csv(path, sep="\t", dtype={"clip_id": str}, keep_default_na=False)
        if frame.columns[0] != "clip_id":
            raise ClusteringError(f"{path}: first column must be clip_id")
        spaces, cardinalities = [], []
        for column in frame.columns[1:]:
            name, _, k = column.rpartition(":")
            spaces.append(LayerKey.parse(name))
            cardinalities.append(int(k))
        return cls(
            clip_ids=frame["clip_id"].tolist(),
            spaces=spaces,
            cardinalities=cardinalities,
            ids=frame.iloc[:, 1:].to_numpy(dtype=np.int64),
        )


def build_assignment_table(store: BaseStore, clusterings: Mapping[LayerKey, Clustering]) -> AssignmentTable:
    """
    Assign every clip in every declared space. Spaces follow the store's
    layer_spec order (audio layers, then visual).
    """
    spaces = store.manifest.keys()
    clusterings = {LayerKey.parse(k): v for k, v in clusterings.items()}
    missing = [key.name for key in spaces if key not in clusterings]
    if missing:
        raise ClusteringError(f"missing clustering for layers {missing}")

    columns = []
    for key in spaces:
        columns.append(assign(clusterings[key], store.layer_matrix(key.modality, key.layer)))
    ids = np.stack(columns, axis=1) if columns else np.empty((len(store), 0), dtype=np.int64)
    return AssignmentTable(
        clip_ids=list(store.clip_ids),
        spaces=list(spaces),
        cardinalities=[clusterings[key].k for key in spaces],
        ids=ids,
    )


def clustering_path(directory, key: LayerKey) -> Path:
    return Path(directory) / f"{key.name}.kmeans"


def save_clusterings(clusterings: Mapping[LayerKey, Clustering], directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for key, clustering in clusterings.items():
        save_clustering(clustering, clustering_path(directory, key))


def load_clusterings(directory) -> Dict[LayerKey, Clustering]:
    directory = Path(directory)
    found = {}
    for path in sorted(directory.glob("*.kmeans")):
        found[LayerKey.parse(path.stem)] = load_clustering(path)
    if not found:
        raise ClusteringError(f"no clustering files in {directory}")
    return found
