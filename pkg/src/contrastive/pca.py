"""
PCA reduction and the similarity-ranking baselines built on it.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

import numpy as np

from src.base import TrainingError
from src.store.feature_store import BaseStore, Modality
from src.utils.logger_config import logger

PCA_DIM = 64
FIT_CHUNK = 65_536
ZERO_VARIANCE_RTOL = 1e-12


class RankingMetric(str, Enum):
    INNER = "inner"
    COSINE = "cosine"
    NEG_L2 = "neg_l2"


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    zero_variance: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.components.shape[0]


def _moments(vectors, chunk: int):
    n, d = vectors.shape
    total = np.zeros(d, dtype=np.float64)
    for start in range(0, n, chunk):
        total += np.asarray(vectors[start:start + chunk], dtype=np.float64).sum(axis=0)
    mean = total / n
    scatter = np.zeros((d, d), dtype=np.float64)
    for start in range(0, n, chunk):
        block = np.asarray(vectors[start:start + chunk], dtype=np.float64) - mean
        scatter += block.T @ block
    return mean, scatter / (n - 1)


def fit_pca(vectors, out_dim: int = PCA_DIM, chunk: int = FIT_CHUNK) -> PcaModel:
    """
    Top ``out_dim`` eigenvectors of the sample covariance, largest first.

    Each component is signed so its largest-magnitude entry is positive.
    Components beyond the data dimension are zero rows; directions with no
    variance are flagged in ``zero_variance``.
    """
    if getattr(vectors, "ndim", None) != 2:
        vectors = np.asarray(vectors, dtype=np.float64)
    n, d = vectors.shape
    if n < 2:
        raise TrainingError("PCA needs at least two samples")
    if out_dim < 1:
        raise TrainingError("out_dim must be at least 1")

    mean, cov = _moments(vectors, chunk)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    eigenvalues = np.clip(eigenvalues[::-1], 0.0, None)
    eigenvectors = eigenvectors[:, ::-1]

    kept = min(out_dim, d)
    components = np.zeros((out_dim, d), dtype=np.float64)
    components[:kept] = eigenvectors[:, :kept].T
    rows = np.arange(kept)
    pivots = np.argmax(np.abs(components[:kept]), axis=1)
    signs = np.where(components[rows, pivots] < 0, -1.0, 1.0)
    components[:kept] *= signs[:, None]

    variance = np.zeros(out_dim, dtype=np.float64)
    variance[:kept] = eigenvalues[:kept]
    total = eigenvalues.sum()
    ratio = variance / total if total > 0 else np.zeros(out_dim)
    zero_variance = variance <= ZERO_VARIANCE_RTOL * max(eigenvalues[0], np.finfo(np.float64).tiny)
    if zero_variance.any():
        logger.warning(f"PCA: {int(zero_variance.sum())} of {out_dim} components carry no variance")

    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=variance,
        explained_variance_ratio=ratio,
        zero_variance=zero_variance,
    )


def project(model: PcaModel, vectors) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    return (vectors - model.mean) @ model.components.T


def fit_baseline_pcas(store: BaseStore, out_dim: int = PCA_DIM) -> Dict[Modality, PcaModel]:
    """One PCA per modality on its penultimate layer."""
    models = {}
    for modality in (Modality.AUDIO, Modality.VISUAL):
        key = store.manifest.penultimate(modality)
        models[modality] = fit_pca(store.layer_matrix(key.modality, key.layer), out_dim)
    return models


def pair_similarity(p: np.ndarray, q: np.ndarray, metric) -> np.ndarray:
    """Row-wise similarity; neg_l2 is the negative squared distance."""
    metric = RankingMetric(metric)
    if metric is RankingMetric.INNER:
        return np.einsum("ij,ij->i", p, q)
    if metric is RankingMetric.COSINE:
        norms = np.linalg.norm(p, axis=1) * np.linalg.norm(q, axis=1)
        dots = np.einsum("ij,ij->i", p, q)
        return np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    diff = p - q
    return -np.einsum("ij,ij->i", diff, diff)


def ranking_baseline(
    store: BaseStore,
    metric,
    pcas: Optional[Dict[Modality, PcaModel]] = None,
    chunk: int = FIT_CHUNK,
) -> np.ndarray:
    """
    Score each clip by the chosen metric between the PCA projections of its
    audio and visual penultimate features.
    """
    metric = RankingMetric(metric)
    if not pcas or Modality.AUDIO not in pcas or Modality.VISUAL not in pcas:
        raise TrainingError("ranking baseline needs a fitted PCA for both modalities")
    audio_pca, visual_pca = pcas[Modality.AUDIO], pcas[Modality.VISUAL]
    if audio_pca.out_dim != visual_pca.out_dim:
        raise TrainingError("audio and visual PCA output dimensions differ")

    audio_key = store.manifest.penultimate(Modality.AUDIO)
    visual_key = store.manifest.penultimate(Modality.VISUAL)
    audio = store.layer_matrix(audio_key.modality, audio_key.layer)
    visual = store.layer_matrix(visual_key.modality, visual_key.layer)

    n = len(store)
    scores = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        scores[start:stop] = pair_similarity(
            project(visual_pca, visual[start:stop]),
            project(audio_pca, audio[start:stop]),
            metric,
        )
    return scores
