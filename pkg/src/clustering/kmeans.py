"""
K-means per feature space: mini-batch SGD with dead-centroid reinitialisation,
and Lloyd's algorithm as the in-memory reference.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import struct
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse

from src.base import ClusteringError
from src.store.feature_store import BaseStore, LayerKey
from src.utils.logger_config import logger
from src.utils.seeding import derive_seed

CLUSTERING_MAGIC = b"ACAVCL01"
ALGORITHM_CODES = {"sgd": 0, "lloyd": 1}
ASSIGN_CHUNK_ELEMENTS = 1 << 22
# Seeds are stored as unsigned 64-bit integers.
SEED_LIMIT = 1 << 64


class KMeansConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: int = Field(500, ge=1)
    lr: float = Field(1e-2, gt=0, le=1)
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(100_000, ge=1)
    seed: int = Field(0, ge=0, lt=SEED_LIMIT)
    standardize: bool = False
    algorithm: Literal["sgd", "lloyd"] = "sgd"
    max_iters: int = Field(300, ge=1)
    tol: float = Field(1e-6, ge=0)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data, chunk: int = 65_536) -> "Standardizer":
        n, dim = data.shape
        total = np.zeros(dim)
        total_sq = np.zeros(dim)
        for start in range(0, n, chunk):
            block = np.asarray(data[start:start + chunk], dtype=np.float64)
            total += block.sum(axis=0)
            total_sq += np.square(block).sum(axis=0)
        mean = total / max(n, 1)
        var = np.maximum(total_sq / max(n, 1) - mean ** 2, 0.0)
        std = np.sqrt(var)
        std[std == 0] = 1.0
        return cls(mean=mean, std=std)

    def __call__(self, block: np.ndarray) -> np.ndarray:
        return (block - self.mean) / self.std


@dataclass
class Clustering:
    centroids: np.ndarray
    update_counts: np.ndarray
    steps_since_init: np.ndarray
    step_count: int
    rng_seed: int
    algorithm: str = "sgd"
    inertia_history: List[float] = field(default_factory=list)
    reinit_count: int = 0
    standardizer: Optional[Standardizer] = None

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def utilization(self) -> np.ndarray:
        steps = np.maximum(self.steps_since_init, 1)
        return self.update_counts / steps

    def prepare(self, block) -> np.ndarray:
        block = np.asarray(block, dtype=np.float64)
        if block.ndim == 1:
            block = block[None, :]
        if block.shape[1] != self.dim:
            raise ClusteringError(f"vector dim {block.shape[1]} does not match clustering dim {self.dim}")
        if self.standardizer is not None:
            block = self.standardizer(block)
        return block


def _check_source(data):
    if not hasattr(data, "shape") or len(data.shape) != 2:
        raise ClusteringError("data must be a 2-D (n, dim) array-like")
    return data.shape


def _load_batch(data, idx: np.ndarray, standardizer: Optional[Standardizer]) -> np.ndarray:
    block = np.asarray(data[idx], dtype=np.float64)
    if not np.isfinite(block).all():
        raise ClusteringError("non-finite input vector")
    if standardizer is not None:
        block = standardizer(block)
    return block


def _nearest_fast(block: np.ndarray, centroids: np.ndarray):
    """Nearest centroid via the |x|^2 - 2xc + |c|^2 expansion."""
    dist = (
        np.square(block).sum(axis=1)[:, None]
        - 2.0 * block @ centroids.T
        + np.square(centroids).sum(axis=1)[None, :]
    )
    labels = np.argmin(dist, axis=1)
    return labels, np.maximum(dist[np.arange(len(block)), labels], 0.0)


def _cluster_sums(labels: np.ndarray, values: np.ndarray, k: int) -> np.ndarray:
    onehot = sparse.csr_matrix(
        (np.ones(len(labels)), (labels, np.arange(len(labels)))),
        shape=(k, len(labels)),
    )
    return np.asarray(onehot @ values)


def _distinct_rows(data, order: np.ndarray, k: int, first: int, standardizer) -> np.ndarray:
    """
    First k distinct vectors in ``order``, scanning past the first batch only
    when it holds fewer than k distinct vectors.
    """
    chosen = []
    seen = set()
    start = 0
    stop = max(first, k)
    while start < len(order) and len(chosen) < k:
        block = _load_batch(data, np.sort(order[start:stop]), standardizer)
        for row in block:
            key = row.tobytes()
            if key not in seen:
                seen.add(key)
                chosen.append(row)
                if len(chosen) == k:
                    break
        start, stop = stop, stop + max(first, k)
    if len(chosen) < k:
        raise ClusteringError(f"data holds fewer than k={k} distinct vectors")
    return np.array(chosen)


def fit_sgd(
    data,
    k: int,
    lr: float = 1e-2,
    epochs: int = 100,
    batch_size: int = 100_000,
    seed: int = 0,
    standardize: bool = False,
    init: Optional[np.ndarray] = None,
) -> Clustering:
    """
    Mini-batch SGD k-means.

    Each batch moves a centroid c with assigned samples to
    (1 - lr) * c + lr * mean(assigned). A centroid whose utilisation
    (batches with at least one assignment / batches since its last
    initialisation) falls below (1/k)^2 is reseeded from the current batch.
    Without ``init`` the starting centroids are k distinct vectors sampled
    from the first batch.
    """
    n, dim = _check_source(data)
    if k < 1:
        raise ClusteringError("k must be at least 1")
    if not 0 < lr <= 1:
        raise ClusteringError("lr must lie in (0, 1]")
    if batch_size < 1 or epochs < 0:
        raise ClusteringError("batch_size must be positive and epochs non-negative")
    if n < k:
        raise ClusteringError(f"data holds fewer than k={k} vectors")

    rng = np.random.default_rng(seed)
    standardizer = Standardizer.fit(data) if standardize else None
    order = rng.permutation(n)

    if init is None:
        # Random sample without replacement from the first batch.
        pool = rng.permutation(order[:max(batch_size, k)])
        centroids = _distinct_rows(data, np.concatenate([pool, order[max(batch_size, k):]]), k, batch_size, standardizer)
    else:
        centroids = np.array(init, dtype=np.float64)
        if centroids.shape != (k, dim):
            raise ClusteringError(f"init must have shape {(k, dim)}")

    update_counts = np.zeros(k, dtype=np.int64)
    steps_since_init = np.zeros(k, dtype=np.int64)
    threshold = (1.0 / k) ** 2
    # A centroid is judged only after one epoch worth of batches since its (re)initialisation.
    grace = -(-n // batch_size)
    step_count = 0
    reinit_count = 0
    history = []

    for epoch in range(epochs):
        if epoch > 0:
            order = rng.permutation(n)
        epoch_error = 0.0
        for start in range(0, n, batch_size):
            block = _load_batch(data, np.sort(order[start:start + batch_size]), standardizer)
            labels, dist = _nearest_fast(block, centroids)
            epoch_error += float(dist.sum())

            counts = np.bincount(labels, minlength=k)
            hit = counts > 0
            # c + lr * mean(x - c) leaves c untouched when every x equals c.
            shift = _cluster_sums(labels, block - centroids[labels], k)
            centroids[hit] += lr * (shift[hit] / counts[hit, None])

            update_counts[hit] += 1
            steps_since_init += 1
            step_count += 1

            dead = np.flatnonzero((steps_since_init >= grace) & (update_counts / steps_since_init < threshold))
            if dead.size:
                picks = rng.integers(0, len(block), size=dead.size)
                centroids[dead] = block[picks]
                update_counts[dead] = 0
                steps_since_init[dead] = 0
                reinit_count += int(dead.size)
                logger.debug(f"Reinitialised {dead.size} centroids at step {step_count}")

        history.append(epoch_error / n)
        if epoch == 0 or (epoch + 1) % 10 == 0 or epoch + 1 == epochs:
            logger.info(f"k-means epoch {epoch + 1}/{epochs}: quantization error {history[-1]:.6g}, reinitialised {reinit_count}")

    return Clustering(
        centroids=centroids,
        update_counts=update_counts,
        steps_since_init=steps_since_init,
        step_count=step_count,
        rng_seed=seed,
        algorithm="sgd",
        inertia_history=history,
        reinit_count=reinit_count,
        standardizer=standardizer,
    )


def fit_lloyd(
    data,
    k: int,
    max_iters: int = 300,
    tol: float = 1e-6,
    seed: int = 0,
    init: Optional[np.ndarray] = None,
    standardize: bool = False,
) -> Clustering:
    """
    Lloyd's algorithm on in-memory data. Empty clusters are reseeded from the
    point farthest from its centroid.
    """
    _check_source(data)
    if k < 1:
        raise ClusteringError("k must be at least 1")
    X = np.asarray(data, dtype=np.float64)
    if not np.isfinite(X).all():
        raise ClusteringError("non-finite input vector")
    standardizer = Standardizer.fit(X) if standardize else None
    if standardizer is not None:
        X = standardizer(X)
    n = len(X)
    if n < k:
        raise ClusteringError(f"data holds fewer than k={k} vectors")

    rng = np.random.default_rng(seed)
    if init is None:
        centroids = _distinct_rows(X, rng.permutation(n), k, n, None)
    else:
        centroids = np.array(init, dtype=np.float64)
        if centroids.shape != (k, X.shape[1]):
            raise ClusteringError(f"init must have shape {(k, X.shape[1])}")

    history = []
    used = np.zeros(k, dtype=np.int64)
    iterations = 0
    for iterations in range(1, max_iters + 1):
        labels, _ = _nearest_fast(X, centroids)
        dist = np.square(X - centroids[labels]).sum(axis=1)
        history.append(float(dist.mean()))

        new = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts):
            new[c] = X[labels == c].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            farthest = np.argsort(-dist, kind="stable")[:empty.size]
            new[empty] = X[farthest]
            logger.debug(f"Lloyd iteration {iterations}: reseeded {empty.size} empty clusters")
        used += counts > 0

        movement = float(np.sqrt(np.square(new - centroids).sum(axis=1)).max())
        centroids = new
        if movement <= tol:
            break

    logger.info(f"Lloyd finished after {iterations} iterations, quantization error {history[-1]:.6g}")
    return Clustering(
        centroids=centroids,
        update_counts=used,
        steps_since_init=np.full(k, iterations, dtype=np.int64),
        step_count=iterations,
        rng_seed=seed,
        algorithm="lloyd",
        inertia_history=history,
        standardizer=standardizer,
    )


def fit(data, config: KMeansConfig) -> Clustering:
    if config.algorithm == "lloyd":
        return fit_lloyd(data, config.k, config.max_iters, config.tol, config.seed, standardize=config.standardize)
    return fit_sgd(data, config.k, config.lr, config.epochs, config.batch_size, config.seed, config.standardize)


def _assign_block(block: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # Exact squared differences; np.argmin keeps the lowest index on ties.
    k, dim = centroids.shape
    rows = max(1, ASSIGN_CHUNK_ELEMENTS // max(1, k * dim))
    labels = np.empty(len(block), dtype=np.int64)
    best = np.empty(len(block), dtype=np.float64)
    for start in range(0, len(block), rows):
        part = block[start:start + rows]
        dist = np.square(part[:, None, :] - centroids[None, :, :]).sum(axis=2)
        labels[start:start + rows] = np.argmin(dist, axis=1)
        best[start:start + rows] = dist[np.arange(len(part)), labels[start:start + rows]]
    return labels, best


def assign(clustering: Clustering, data, chunk: int = 65_536) -> np.ndarray:
    """
    Nearest-centroid ID per vector (squared Euclidean, lowest index on ties).
    """
    if hasattr(data, "shape") and len(data.shape) == 1:
        data = np.asarray(data)[None, :]
    if hasattr(data, "shape"):
        n = data.shape[0]
        blocks = (data[start:start + chunk] for start in range(0, n, chunk))
    else:
        blocks = (np.atleast_2d(np.asarray(v)) for v in data)

    out = []
    for block in blocks:
        prepared = clustering.prepare(block)
        labels, _ = _assign_block(prepared, clustering.centroids)
        out.append(labels)
    if not out:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(out)


def quantization_error(clustering: Clustering, data, chunk: int = 65_536) -> float:
    """Mean squared distance from each vector to its nearest centroid."""
    total = 0.0
    n = data.shape[0]
    for start in range(0, n, chunk):
        prepared = clustering.prepare(data[start:start + chunk])
        _, best = _assign_block(prepared, clustering.centroids)
        total += float(best.sum())
    return total / max(n, 1)


def fit_store_spaces(
    store: BaseStore,
    config: KMeansConfig,
    keys: Optional[List[LayerKey]] = None,
    workers: int = 1,
    k_per_space: Optional[Dict[LayerKey, int]] = None,
) -> Dict[LayerKey, Clustering]:
    """
    Fit one clustering per (modality, layer) space. Each space gets its own
    seed derived from ``config.seed`` and the space name.
    """
    keys = keys or store.manifest.keys()

    def fit_one(key: LayerKey):
        local = config.model_copy(update={
            "seed": derive_seed(config.seed, key.name),
            "k": (k_per_space or {}).get(key, config.k),
        })
        logger.info(f"Fitting {local.algorithm} k-means on {key.name} (k={local.k})")
        return key, fit(store.layer_matrix(key.modality, key.layer), local)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        return dict(executor.map(fit_one, keys))


def save_clustering(clustering: Clustering, path):
    if not 0 <= clustering.rng_seed < SEED_LIMIT:
        raise ClusteringError(f"seed {clustering.rng_seed} does not fit an unsigned 64-bit field")
    header = CLUSTERING_MAGIC + struct.pack(
        "<IIQQQBBI",
        clustering.k,
        clustering.dim,
        clustering.rng_seed,
        clustering.step_count,
        clustering.reinit_count,
        ALGORITHM_CODES[clustering.algorithm],
        1 if clustering.standardizer is not None else 0,
        len(clustering.inertia_history),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        np.asarray(clustering.centroids, dtype="<f8").tofile(fh)
        np.asarray(clustering.update_counts, dtype="<u8").tofile(fh)
        np.asarray(clustering.steps_since_init, dtype="<u8").tofile(fh)
        np.asarray(clustering.inertia_history, dtype="<f8").tofile(fh)
        if clustering.standardizer is not None:
            np.asarray(clustering.standardizer.mean, dtype="<f8").tofile(fh)
            np.asarray(clustering.standardizer.std, dtype="<f8").tofile(fh)


def load_clustering(path) -> Clustering:
    layout = "<IIQQQBBI"
    with open(path, "rb") as fh:
        magic = fh.read(len(CLUSTERING_MAGIC))
        if magic != CLUSTERING_MAGIC:
            raise ClusteringError(f"{path} is not a clustering file")
        k, dim, seed, steps, reinit, algo, standardized, n_hist = struct.unpack(layout, fh.read(struct.calcsize(layout)))
        centroids = np.fromfile(fh, dtype="<f8", count=k * dim).reshape(k, dim)
        update_counts = np.fromfile(fh, dtype="<u8", count=k).astype(np.int64)
        steps_since_init = np.fromfile(fh, dtype="<u8", count=k).astype(np.int64)
        history = np.fromfile(fh, dtype="<f8", count=n_hist).tolist()
        standardizer = None
        if standardized:
            mean = np.fromfile(fh, dtype="<f8", count=dim)
            std = np.fromfile(fh, dtype="<f8", count=dim)
            standardizer = Standardizer(mean=mean, std=std)
    if centroids.shape != (k, dim):
        raise ClusteringError(f"{path} is truncated")
    algorithm = {v: name for name, v in ALGORITHM_CODES.items()}[algo]
    return Clustering(
        centroids=centroids,
        update_counts=update_counts,
        steps_since_init=steps_since_init,
        step_count=steps,
        rng_seed=seed,
        algorithm=algorithm,
        inertia_history=history,
        reinit_count=reinit,
        standardizer=standardizer,
    )
