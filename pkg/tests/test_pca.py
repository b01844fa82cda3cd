import numpy as np
import pytest

from src.base import TrainingError
from src.contrastive.pca import (
    RankingMetric,
    fit_baseline_pcas,
    fit_pca,
    pair_similarity,
    project,
    ranking_baseline,
)
from src.selection.greedy import rank_select
from src.store.feature_store import Modality


def test_points_on_a_line():
    direction = np.array([1.0, 2.0, -2.0]) / 3.0
    t = np.linspace(-5.0, 5.0, 21)
    data = t[:, None] * direction + np.array([1.0, 0.0, 3.0])
    model = fit_pca(data, out_dim=3)
    np.testing.assert_allclose(np.abs(model.components[0]), np.abs(direction), atol=1e-10)
    assert model.explained_variance_ratio[0] == pytest.approx(1.0)
    assert model.zero_variance.tolist() == [False, True, True]
    np.testing.assert_allclose(model.mean, [1.0, 0.0, 3.0], atol=1e-12)


def test_extra_components_are_zero_padded(rng):
    model = fit_pca(rng.standard_normal((30, 3)), out_dim=5)
    assert model.components.shape == (5, 3)
    np.testing.assert_array_equal(model.components[3:], 0.0)
    assert model.zero_variance.tolist() == [False, False, False, True, True]
    assert project(model, rng.standard_normal((4, 3))).shape == (4, 5)


def test_matches_covariance_eigendecomposition(rng):
    for _ in range(20):
        d = int(rng.integers(2, 8))
        n = int(rng.integers(d + 5, 60))
        data = rng.standard_normal((n, d)) @ rng.standard_normal((d, d))
        out_dim = int(rng.integers(1, d + 1))
        model = fit_pca(data, out_dim=out_dim, chunk=7)
        values, vectors = np.linalg.eigh(np.cov(data, rowvar=False))
        values, vectors = values[::-1], vectors[:, ::-1]
        np.testing.assert_allclose(model.explained_variance, np.clip(values[:out_dim], 0, None), rtol=1e-8, atol=1e-10)
        alignment = np.abs(np.sum(model.components * vectors[:, :out_dim].T, axis=1))
        np.testing.assert_allclose(alignment, 1.0, atol=1e-6)


def test_components_are_orthonormal_with_positive_pivots(rng):
    model = fit_pca(rng.standard_normal((100, 6)), out_dim=4)
    np.testing.assert_allclose(model.components @ model.components.T, np.eye(4), atol=1e-10)
    for row in model.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_full_rank_projection_preserves_distances(rng):
    data = rng.standard_normal((40, 5))
    projected = project(fit_pca(data, out_dim=5), data)
    original = np.linalg.norm(data[:, None] - data[None], axis=2)
    reduced = np.linalg.norm(projected[:, None] - projected[None], axis=2)
    np.testing.assert_allclose(reduced, original, atol=1e-9)


def test_too_few_samples():
    with pytest.raises(TrainingError):
        fit_pca(np.ones((1, 3)))


def test_pair_similarity_geometry():
    p = np.array([[1.0, 0.0], [3.0, 4.0], [0.0, 0.0]])
    q = np.array([[0.0, 1.0], [3.0, 4.0], [1.0, 1.0]])
    np.testing.assert_allclose(pair_similarity(p, q, "inner"), [0.0, 25.0, 0.0])
    np.testing.assert_allclose(pair_similarity(p, q, RankingMetric.COSINE), [0.0, 1.0, 0.0])
    np.testing.assert_allclose(pair_similarity(p, q, "neg_l2"), [-2.0, 0.0, -2.0])
    with pytest.raises(ValueError):
        pair_similarity(p, q, "manhattan")


@pytest.mark.parametrize("metric", list(RankingMetric))
def test_ranking_matches_naive_top_half(memory_store, metric):
    pcas = fit_baseline_pcas(memory_store, out_dim=3)
    scores = ranking_baseline(memory_store, metric, pcas, chunk=9)

    audio = memory_store.layer_matrix(Modality.AUDIO, 2)
    visual = memory_store.layer_matrix(Modality.VISUAL, 2)
    naive = []
    for a, v in zip(audio, visual):
        pa = (a - pcas[Modality.AUDIO].mean) @ pcas[Modality.AUDIO].components.T
        pv = (v - pcas[Modality.VISUAL].mean) @ pcas[Modality.VISUAL].components.T
        if metric is RankingMetric.INNER:
            naive.append(pv @ pa)
        elif metric is RankingMetric.COSINE:
            naive.append(pv @ pa / (np.linalg.norm(pv) * np.linalg.norm(pa)))
        else:
            naive.append(-np.sum((pv - pa) ** 2))
    np.testing.assert_allclose(scores, naive, atol=1e-9)
    half = len(memory_store) // 2
    assert set(rank_select(scores, half)) == set(rank_select(np.array(naive), half))


def test_ranking_needs_matching_fitted_pcas(memory_store):
    with pytest.raises(TrainingError):
        ranking_baseline(memory_store, "inner", None)
    pcas = fit_baseline_pcas(memory_store, out_dim=3)
    pcas[Modality.AUDIO] = fit_pca(memory_store.layer_matrix(Modality.AUDIO, 2), out_dim=4)
    with pytest.raises(TrainingError):
        ranking_baseline(memory_store, "cosine", pcas)
