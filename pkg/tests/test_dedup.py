from itertools import combinations

import numpy as np
import pytest

from src.base import FilterError
from src.filters.dedup import SimilarityMatrix, dedup_sources, select_clips, subset_objective


def _random_matrix(rng, n):
    upper = np.triu(rng.random((n, n)), 1)
    return SimilarityMatrix(upper + upper.T)


def _planted():
    scores = np.full((5, 5), 0.1)
    scores[0, 1] = scores[1, 0] = 0.95
    scores[3, 4] = scores[4, 3] = 0.95
    np.fill_diagonal(scores, 0.0)
    return SimilarityMatrix(scores)


def test_small_sources_keep_every_clip():
    result = select_clips(_random_matrix(np.random.default_rng(0), 3), k=3)
    assert result.indices == (0, 1, 2)
    assert result.swaps == 0
    assert result.converged


def test_planted_duplicates_are_split_up():
    result = select_clips(_planted(), k=3)
    assert result.indices == (1, 2, 3)
    assert result.objective == pytest.approx(0.3)
    assert result.swaps == 1
    assert result.history == pytest.approx([1.15, 0.3])


@pytest.mark.parametrize("multi_start", [True, False])
def test_result_is_swap_local_optimum(multi_start):
    rng = np.random.default_rng(7)
    for _ in range(30):
        matrix = _random_matrix(rng, 8)
        result = select_clips(matrix, k=3, multi_start=multi_start)
        chosen = set(result.indices)
        assert result.converged
        assert result.objective <= result.history[0] + 1e-12
        for out in chosen:
            for cand in set(range(8)) - chosen:
                swapped = (chosen - {out}) | {cand}
                assert subset_objective(matrix.scores, swapped) >= result.objective - 1e-9


def test_matches_exhaustive_search_on_small_sources():
    rng = np.random.default_rng(11)
    exact = 0
    for _ in range(100):
        matrix = _random_matrix(rng, 6)
        result = select_clips(matrix, k=3)
        best = min(subset_objective(matrix.scores, c) for c in combinations(range(6), 3))
        assert result.objective <= 1.1 * best + 1e-12
        if result.objective <= best + 1e-9:
            exact += 1
    assert exact >= 80


def test_max_iters_caps_swaps():
    result = select_clips(_planted(), k=3, max_iters=1)
    assert result.swaps == 1
    assert not result.converged


@pytest.mark.parametrize(
    "scores",
    [
        np.zeros((2, 3)),
        np.array([[0.0, 1.0], [0.5, 0.0]]),
        np.array([[1.0, 0.0], [0.0, 0.0]]),
        np.array([[0.0, np.nan], [np.nan, 0.0]]),
    ],
)
def test_invalid_matrices_are_rejected(scores):
    with pytest.raises(FilterError):
        SimilarityMatrix(scores)


def test_matrix_from_file(tmp_path):
    path = tmp_path / "video.txt"
    path.write_text("0 0.5\n0.5 0\n")
    assert SimilarityMatrix.from_file(path).n == 2


def test_dedup_sources_per_video():
    clip_ids = ["a0", "a1", "a2", "a3", "a4", "b0", "b1"]
    source_ids = ["a"] * 5 + ["b"] * 2
    kept = dedup_sources(clip_ids, source_ids, {"a": _planted()}, k=3)
    assert kept == ["a1", "a2", "a3", "b0", "b1"]


def test_dedup_sources_errors():
    with pytest.raises(FilterError):
        dedup_sources(["a0", "a1"], ["a", "a"], {}, k=1)
    with pytest.raises(FilterError):
        dedup_sources(["a0", "a1"], ["a", "a"], {"a": _planted()}, k=1)
