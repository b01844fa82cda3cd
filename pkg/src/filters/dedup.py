"""
Pick up to k clips per source video with minimum total pairwise similarity,
via first-improvement single-swap local search from several start sets.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from src.base import FilterError
from src.utils.logger_config import logger

IMPROVEMENT_EPS = 1e-12


@dataclass(frozen=True)
class SimilarityMatrix:
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
            raise FilterError(f"similarity matrix must be square, got shape {scores.shape}")
        if scores.shape[0] == 0:
            raise FilterError("empty similarity matrix")
        if not np.isfinite(scores).all():
            raise FilterError("similarity matrix has non-finite scores")
        if not np.array_equal(scores, scores.T):
            raise FilterError("similarity matrix is not symmetric")
        if np.any(np.diag(scores) != 0):
            raise FilterError("similarity matrix diagonal must be zero")
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @classmethod
    def from_file(cls, path) -> "SimilarityMatrix":
        return cls(np.loadtxt(path, dtype=np.float64, ndmin=2))


@dataclass
class DedupResult:
    indices: Tuple[int, ...]
    objective: float
    swaps: int
    converged: bool
    history: List[float] = field(default_factory=list)


def subset_objective(scores: np.ndarray, chosen: Sequence[int]) -> float:
    idx = np.asarray(sorted(chosen), dtype=np.int64)
    return float(scores[np.ix_(idx, idx)].sum() / 2.0)


def _greedy_start(scores: np.ndarray, seed_index: int, k: int) -> List[int]:
    chosen = [seed_index]
    link = scores[seed_index].copy()
    link[seed_index] = np.inf
    while len(chosen) < k:
        nxt = int(np.argmin(link))
        chosen.append(nxt)
        link += scores[nxt]
        link[chosen] = np.inf
    return sorted(chosen)


def _local_search(scores: np.ndarray, chosen: List[int], max_iters: int) -> DedupResult:
    n = scores.shape[0]
    objective = subset_objective(scores, chosen)
    history = [objective]
    swaps = 0
    converged = False

    while swaps < max_iters:
        chosen_set = set(chosen)
        # Contribution of each candidate to the current chosen set.
        link = scores[:, chosen].sum(axis=1)
        improved = False
        for position, out in enumerate(chosen):
            for cand in range(n):
                if cand in chosen_set:
                    continue
                delta = (link[cand] - scores[cand, out]) - link[out]
                if delta < -IMPROVEMENT_EPS:
                    chosen[position] = cand
                    chosen.sort()
                    objective = subset_objective(scores, chosen)
                    history.append(objective)
                    swaps += 1
                    improved = True
                    break
            if improved:
                break
        if not improved:
            converged = True
            break
    return DedupResult(indices=tuple(chosen), objective=objective, swaps=swaps, converged=converged, history=history)


def select_clips(matrix: SimilarityMatrix, k: int, max_iters: int = 100, multi_start: bool = True) -> DedupResult:
    """
    Choose min(k, n) indices minimising the within-set pairwise score sum.

    The first start set is the k indices with the smallest row sums; from
    there, the first swap (chosen, unchosen) lowering the objective is applied
    and the scan restarts, until no swap helps or ``max_iters`` swaps were
    made. With ``multi_start`` the search is repeated from a greedy set grown
    around every index and the lowest objective wins (earliest start on ties).
    """
    if k < 1 or max_iters < 1:
        raise FilterError("k and max_iters must be at least 1")
    scores = matrix.scores
    n = matrix.n
    if k >= n:
        everything = tuple(range(n))
        value = subset_objective(scores, everything)
        return DedupResult(indices=everything, objective=value, swaps=0, converged=True, history=[value])

    order = np.argsort(scores.sum(axis=1), kind="stable")
    best = _local_search(scores, sorted(int(i) for i in order[:k]), max_iters)
    if multi_start:
        for seed_index in range(n):
            result = _local_search(scores, _greedy_start(scores, seed_index, k), max_iters)
            if result.objective < best.objective - IMPROVEMENT_EPS:
                best = result

    logger.debug(f"Local search finished after {best.swaps} swaps, objective {best.objective:.6f}")
    return best


def dedup_sources(
    clip_ids: Sequence[str],
    source_ids: Sequence[str],
    matrices: Mapping[str, SimilarityMatrix],
    k: int = 3,
    max_iters: int = 100,
) -> List[str]:
    """
    Apply select_clips per source video. Sources without a matrix must have
    at most k clips; their clips are kept as-is.
    """
    by_source: Dict[str, List[str]] = defaultdict(list)
    for clip_id, source_id in zip(clip_ids, source_ids):
        by_source[source_id].append(clip_id)

    kept = []
    for source_id, clips in by_source.items():
        matrix = matrices.get(source_id)
        if matrix is None:
            if len(clips) > k:
                raise FilterError(f"source {source_id} has {len(clips)} clips but no similarity matrix")
            kept.extend(clips)
            continue
        if matrix.n != len(clips):
            raise FilterError(f"source {source_id}: matrix size {matrix.n} != clip count {len(clips)}")
        result = select_clips(matrix, k, max_iters)
        kept.extend(clips[i] for i in result.indices)
    return kept
