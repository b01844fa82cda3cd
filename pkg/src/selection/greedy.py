"""
Greedy maximisation of the clustering-based MI objective.

``greedy`` scans every remaining clip at each step; ``batch_greedy`` samples
a batch of b remaining clips per round and greedily takes up to s of them.
Ties always go to the smallest table row.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import time
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.base import SelectionError
from src.clustering.assignment import AssignmentTable
from src.mi.estimator import ContingencyState, PairingScheme
from src.utils.logger_config import logger

LARGE_SCALE = (10_000, 500)
SMALL_SCALE = (100, 25)
PARALLEL_MIN_CANDIDATES = 4096


class SelectionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    target_size: int = Field(..., ge=0)
    batch_size: int = Field(LARGE_SCALE[0], ge=1)
    selection_size: int = Field(LARGE_SCALE[1], ge=1)
    seed: int = 0
    scheme: PairingScheme = PairingScheme()

    @model_validator(mode="after")
    def _check_sizes(self):
        if self.selection_size > self.batch_size:
            raise ValueError("selection_size must not exceed batch_size")
        return self


@dataclass
class SelectionResult:
    chosen: List[str]
    rows: List[int]
    step_scores: List[float] = field(default_factory=list)
    wall_stats: List[float] = field(default_factory=list)
    round_sizes: List[int] = field(default_factory=list)

    def report(self, config: Optional[SelectionConfig] = None) -> dict:
        return {
            "selected": len(self.chosen),
            "final_score": self.step_scores[-1] if self.step_scores else 0.0,
            "step_scores": self.step_scores,
            "round_sizes": self.round_sizes,
            "wall_seconds": self.wall_stats,
            "total_seconds": float(sum(self.wall_stats)),
            "config": config.model_dump(mode="json") if config is not None else None,
        }


def _best_candidate(state: ContingencyState, candidate_ids: np.ndarray, executor=None, workers: int = 1) -> int:
    """Position of the best candidate; first position wins ties."""
    if executor is None or len(candidate_ids) < PARALLEL_MIN_CANDIDATES:
        return int(np.argmax(state.delta_scores(candidate_ids)))
    chunks = np.array_split(candidate_ids, workers)
    deltas = np.concatenate(list(executor.map(state.delta_scores, chunks)))
    return int(np.argmax(deltas))


def greedy(table: AssignmentTable, target_size: int, scheme: PairingScheme, workers: int = 1) -> SelectionResult:
    """
    Plain greedy: at each step add the remaining clip with the largest gain.
    """
    n = len(table)
    if target_size > n:
        raise SelectionError(f"target size {target_size} exceeds table size {n}")
    state = ContingencyState.for_table(table, scheme)
    available = np.ones(n, dtype=bool)
    result = SelectionResult(chosen=[], rows=[])

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for _ in range(target_size):
            start = time.perf_counter()
            candidates = np.flatnonzero(available)
            row = int(candidates[_best_candidate(state, table.ids[candidates], executor, workers)])
            state.add_one(table.ids[row])
            available[row] = False
            result.rows.append(row)
            result.chosen.append(table.clip_ids[row])
            result.step_scores.append(state.cached_value())
            result.round_sizes.append(len(result.rows))
            result.wall_stats.append(time.perf_counter() - start)
    finally:
        if executor is not None:
            executor.shutdown()

    logger.info(f"Greedy selected {len(result.rows)} of {n} clips, F={result.step_scores[-1] if result.step_scores else 0.0:.6f}")
    return result


def batch_greedy(table: AssignmentTable, config: SelectionConfig, workers: int = 1) -> SelectionResult:
    """
    Batch greedy: each round samples b clips uniformly without replacement
    from the unselected pool and greedily picks up to s of them; the rest
    return to the pool.
    """
    n = len(table)
    target = config.target_size
    if target > n:
        raise SelectionError(f"target size {target} exceeds table size {n}")

    rng = np.random.default_rng(config.seed)
    state = ContingencyState.for_table(table, config.scheme)
    available = np.ones(n, dtype=bool)
    result = SelectionResult(chosen=[], rows=[])
    rounds = 0

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while len(result.rows) < target:
            start = time.perf_counter()
            pool = np.flatnonzero(available)
            if config.batch_size < len(pool):
                batch = np.sort(rng.choice(pool, size=config.batch_size, replace=False))
            else:
                batch = pool
            batch_ids = table.ids[batch]
            open_slots = np.ones(len(batch), dtype=bool)

            for _ in range(config.selection_size):
                positions = np.flatnonzero(open_slots)
                if not positions.size:
                    break
                best = int(positions[_best_candidate(state, batch_ids[positions], executor, workers)])
                row = int(batch[best])
                state.add_one(batch_ids[best])
                open_slots[best] = False
                available[row] = False
                result.rows.append(row)
                result.chosen.append(table.clip_ids[row])
                result.step_scores.append(state.cached_value())
                if len(result.rows) == target:
                    break

            rounds += 1
            result.round_sizes.append(len(result.rows))
            result.wall_stats.append(time.perf_counter() - start)
            if rounds % 100 == 0:
                logger.info(f"Batch greedy round {rounds}: {len(result.rows)}/{target} selected, F={result.step_scores[-1]:.6f}")
    finally:
        if executor is not None:
            executor.shutdown()

    logger.info(f"Batch greedy finished after {rounds} rounds with {len(result.rows)} clips")
    return result


def rank_select(scores, n_select: int) -> np.ndarray:
    """
    Indices of the top ``n_select`` scores, descending, ties to the smallest index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if n_select > len(scores):
        raise SelectionError(f"cannot select {n_select} of {len(scores)} items")
    if n_select < 0:
        raise SelectionError("n_select must be non-negative")
    if not np.isfinite(scores).all():
        raise SelectionError("scores must be finite")
    return np.argsort(-scores, kind="stable")[:n_select]
