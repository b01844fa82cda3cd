"""
Clustering-based mutual information between partitions of a clip set, and
the layer-pair averaged objective used for subset selection.
"""
from dataclasses import dataclass, field
from enum import Enum
import itertools
import math
import re
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.special import xlogy

from src.base import EstimatorError
from src.clustering.assignment import AssignmentTable
from src.store.feature_store import LayerKey, Modality
from src.utils.logger_config import logger

NEGATIVE_TOLERANCE = 1e-12
XLOGX_GROWTH = 2
LINEAR_FLOOR, LINEAR_CAP = 0.1, 1.9


class PairingKind(str, Enum):
    DIAGONAL = "diagonal"
    BIPARTITE = "bipartite"
    COMBINATION = "combination"
    SINGLE = "single"


def parse_layer_weights(spec, n_layers: int) -> Optional[Tuple[float, ...]]:
    """
    Turn a weight description into one weight per layer index 1..n_layers.

    Accepts ``uniform``, ``linear(k)``, ``exp(k)``, a comma separated list, or
    a sequence of numbers. ``uniform`` returns None.
    """
    if spec is None:
        return None
    if not isinstance(spec, str):
        weights = tuple(float(w) for w in spec)
    else:
        text = spec.strip().lower()
        if text == "uniform":
            return None
        center = (n_layers + 1) / 2.0
        match = re.fullmatch(r"(linear|exp)\(\s*([-+0-9.eE]+)\s*\)", text)
        if match:
            slope = float(match.group(2))
            offsets = [layer - center for layer in range(1, n_layers + 1)]
            if match.group(1) == "linear":
                weights = tuple(min(max(1.0 + slope * o, LINEAR_FLOOR), LINEAR_CAP) for o in offsets)
            else:
                weights = tuple(math.exp(slope * o) for o in offsets)
        else:
            try:
                weights = tuple(float(w) for w in text.split(","))
            except ValueError:
                raise EstimatorError(f"unrecognised layer weights {spec!r}") from None
    if len(weights) != n_layers:
        raise EstimatorError(f"expected {n_layers} layer weights, got {len(weights)}")
    if not all(w > 0 and math.isfinite(w) for w in weights):
        raise EstimatorError("layer weights must be finite and strictly positive")
    return weights


class PairingScheme(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PairingKind = PairingKind.COMBINATION
    layer_weights: Optional[Tuple[float, ...]] = None
    single_layer: Optional[int] = None

    @field_validator("layer_weights")
    @classmethod
    def _positive(cls, value):
        if value is not None and not all(w > 0 for w in value):
            raise ValueError("layer weights must be strictly positive")
        return value

    @classmethod
    def parse(cls, kind: str, weights="uniform", n_layers: int = 5) -> "PairingScheme":
        kind = kind.strip().lower()
        single = None
        match = re.fullmatch(r"single\((\d+)\)", kind)
        if match:
            kind, single = "single", int(match.group(1))
        return cls(kind=PairingKind(kind), layer_weights=parse_layer_weights(weights, n_layers), single_layer=single)

    def pairs(self, spaces: Sequence[LayerKey]) -> List[Tuple[int, int]]:
        """
        Column-index pairs of the spaces that enter the objective.
        """
        audio = {s.layer: i for i, s in enumerate(spaces) if s.modality == Modality.AUDIO}
        visual = {s.layer: i for i, s in enumerate(spaces) if s.modality == Modality.VISUAL}

        if self.kind == PairingKind.COMBINATION:
            pairs = list(itertools.combinations(range(len(spaces)), 2))
        elif self.kind == PairingKind.BIPARTITE:
            pairs = [(audio[a], visual[v]) for a in sorted(audio) for v in sorted(visual)]
        elif self.kind == PairingKind.DIAGONAL:
            pairs = [(audio[layer], visual[layer]) for layer in sorted(set(audio) & set(visual))]
        else:
            layer = self.single_layer
            if layer not in audio or layer not in visual:
                raise EstimatorError(f"single({layer}) needs audio and visual layer {layer}")
            pairs = [(audio[layer], visual[layer])]

        if not pairs:
            raise EstimatorError(f"pairing scheme {self.kind.value} yields no pairs for spaces {[s.name for s in spaces]}")
        return pairs

    def layer_weight(self, space: LayerKey) -> float:
        if self.layer_weights is None:
            return 1.0
        if not 1 <= space.layer <= len(self.layer_weights):
            raise EstimatorError(f"no weight declared for layer {space.layer}")
        return self.layer_weights[space.layer - 1]

    def pair_weights(self, spaces: Sequence[LayerKey], pairs: Sequence[Tuple[int, int]]) -> np.ndarray:
        """Product of the two layers' weights, normalised to sum to one."""
        raw = np.array([self.layer_weight(spaces[a]) * self.layer_weight(spaces[b]) for a, b in pairs])
        return raw / raw.sum()


@dataclass
class MiScore:
    value: float
    per_pair: List[Tuple[Tuple[str, str], float]] = field(default_factory=list)


def mi_pair(joint, n: Optional[int] = None) -> float:
    """
    Plug-in MI (nats) of a contingency table:
    sum_ij (n_ij / n) * log(n * n_ij / (n_i * n_j)), with empty cells contributing 0.
    """
    joint = np.asarray(joint, dtype=np.float64)
    total = joint.sum()
    if n is None:
        n = total
    if n <= 0:
        raise EstimatorError("mutual information is undefined for an empty table")
    if total != n:
        raise EstimatorError(f"table total {total} does not match n={n}")
    rows = joint.sum(axis=1)
    cols = joint.sum(axis=0)
    i, j = np.nonzero(joint)
    cells = joint[i, j]
    value = float(np.sum((cells / n) * (math.log(n) + np.log(cells) - np.log(rows[i]) - np.log(cols[j]))))
    return max(value, 0.0)


def _xlogx_table(size: int) -> np.ndarray:
    values = np.arange(size, dtype=np.float64)
    return xlogy(values, values)


class ContingencyState:
    """
    Joint and marginal counts of a selected set for every scheme pair.

    Caches sum(c log c) per joint table and per marginal so one insertion
    touches one joint cell and two marginals per pair.
    """

    def __init__(self, spaces: Sequence[LayerKey], cardinalities: Sequence[int], scheme: PairingScheme):
        self.spaces = [LayerKey.parse(s) for s in spaces]
        self.cardinalities = np.asarray(cardinalities, dtype=np.int64)
        self.scheme = scheme
        self.pair_list = scheme.pairs(self.spaces)
        self.weights = scheme.pair_weights(self.spaces, self.pair_list)

        self._a = np.array([a for a, _ in self.pair_list], dtype=np.int64)
        self._b = np.array([b for _, b in self.pair_list], dtype=np.int64)
        sizes = self.cardinalities[self._a] * self.cardinalities[self._b]
        self._joint_offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self._marginal_offsets = np.concatenate([[0], np.cumsum(self.cardinalities)[:-1]]).astype(np.int64)
        self._joint = np.zeros(int(sizes.sum()), dtype=np.int64)
        self._marginal = np.zeros(int(self.cardinalities.sum()), dtype=np.int64)
        self._joint_xlogx = np.zeros(len(self.pair_list))
        self._marginal_xlogx = np.zeros(len(self.spaces))
        self._xlogx = _xlogx_table(1024)
        self.n = 0

    @classmethod
    def for_table(cls, table: AssignmentTable, scheme: PairingScheme) -> "ContingencyState":
        return cls(table.spaces, table.cardinalities, scheme)

    def copy(self) -> "ContingencyState":
        clone = object.__new__(ContingencyState)
        clone.__dict__.update(self.__dict__)
        for name in ("_joint", "_marginal", "_joint_xlogx", "_marginal_xlogx"):
            setattr(clone, name, getattr(self, name).copy())
        return clone

    @property
    def joint_counts(self) -> List[np.ndarray]:
        tables = []
        for p, offset in enumerate(self._joint_offsets):
            ka, kb = self.cardinalities[self._a[p]], self.cardinalities[self._b[p]]
            tables.append(self._joint[offset:offset + ka * kb].reshape(ka, kb))
        return tables

    @property
    def marginal_counts(self) -> List[np.ndarray]:
        return [
            self._marginal[offset:offset + k]
            for offset, k in zip(self._marginal_offsets, self.cardinalities)
        ]

    def _validate(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.shape[1] != len(self.spaces):
            raise EstimatorError(f"expected {len(self.spaces)} cluster ids per clip, got {ids.shape[1]}")
        if ids.size and (ids.min() < 0 or np.any(ids >= self.cardinalities[None, :])):
            raise EstimatorError("cluster id outside its clustering's range")
        return ids

    def _cells(self, ids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        joint = self._joint_offsets[None, :] + ids[:, self._a] * self.cardinalities[self._b][None, :] + ids[:, self._b]
        marginal = self._marginal_offsets[None, :] + ids
        return joint, marginal

    def _ensure_table(self, largest: int):
        if largest + 2 > len(self._xlogx):
            size = len(self._xlogx)
            while largest + 2 > size:
                size *= XLOGX_GROWTH
            self._xlogx = _xlogx_table(size)

    def add_clip(self, ids) -> "ContingencyState":
        """Insert one clip's cluster ids (one per space); returns self."""
        return self.add_clips(ids)

    def add_clips(self, ids) -> "ContingencyState":
        ids = self._validate(ids)
        if not len(ids):
            return self
        joint, marginal = self._cells(ids)
        np.add.at(self._joint, joint.ravel(), 1)
        np.add.at(self._marginal, marginal.ravel(), 1)
        self.n += len(ids)
        self._refresh_cache()
        return self

    def _refresh_cache(self):
        self._ensure_table(self.n)
        for p, table in enumerate(self.joint_counts):
            self._joint_xlogx[p] = float(self._xlogx[table[table > 0]].sum())
        for s, counts in enumerate(self.marginal_counts):
            self._marginal_xlogx[s] = float(self._xlogx[counts[counts > 0]].sum())

    def add_one(self, ids) -> "ContingencyState":
        """
        Incremental insertion updating the cached sums from the touched cells only.
        """
        ids = self._validate(ids)
        if len(ids) != 1:
            return self.add_clips(ids)
        joint, marginal = self._cells(ids)
        joint, marginal = joint[0], marginal[0]
        self._ensure_table(self.n + 1)
        table = self._xlogx
        jc = self._joint[joint]
        mc = self._marginal[marginal]
        self._joint_xlogx += table[jc + 1] - table[jc]
        self._marginal_xlogx += table[mc + 1] - table[mc]
        self._joint[joint] = jc + 1
        self._marginal[marginal] = mc + 1
        self.n += 1
        return self

    def cached_per_pair(self) -> np.ndarray:
        if self.n <= 1:
            return np.zeros(len(self.pair_list))
        n = self.n
        values = math.log(n) + (self._joint_xlogx - self._marginal_xlogx[self._a] - self._marginal_xlogx[self._b]) / n
        return np.maximum(values, 0.0)

    def cached_value(self) -> float:
        """F from the cached sums; agrees with score() up to rounding."""
        return float((self.cached_per_pair() * self.weights).sum())

    def delta_scores(self, candidates) -> np.ndarray:
        """
        F(X + {x}) - F(X) for every candidate row, without mutating the state.
        """
        ids = self._validate(candidates)
        if self.n == 0 or not len(ids):
            return np.zeros(len(ids))
        self._ensure_table(self.n + 1)
        table = self._xlogx
        joint, marginal = self._cells(ids)
        jc = self._joint[joint]
        mc = self._marginal[marginal]
        joint_sum = self._joint_xlogx[None, :] + (table[jc + 1] - table[jc])
        marginal_sum = self._marginal_xlogx[None, :] + (table[mc + 1] - table[mc])
        n1 = self.n + 1
        mi = math.log(n1) + (joint_sum - marginal_sum[:, self._a] - marginal_sum[:, self._b]) / n1
        np.maximum(mi, 0.0, out=mi)
        return (mi * self.weights[None, :]).sum(axis=1) - self.cached_value()

    def pair_names(self) -> List[Tuple[str, str]]:
        return [(self.spaces[a].name, self.spaces[b].name) for a, b in self.pair_list]


def build_state(table: AssignmentTable, scheme: PairingScheme, rows=None) -> ContingencyState:
    """Tally the contingency tables of ``rows`` (all rows when None) in one pass."""
    state = ContingencyState.for_table(table, scheme)
    ids = table.ids if rows is None else table.ids[np.asarray(rows, dtype=np.int64)]
    return state.add_clips(ids)


def add_clip(state: ContingencyState, candidate) -> ContingencyState:
    return state.add_one(candidate)


def _pair_weights(state: ContingencyState, layer_weights) -> np.ndarray:
    if layer_weights is None:
        return state.weights
    n_layers = max(space.layer for space in state.spaces)
    scheme = state.scheme.model_copy(update={"layer_weights": parse_layer_weights(layer_weights, n_layers)})
    return scheme.pair_weights(state.spaces, state.pair_list)


def score(state: ContingencyState, layer_weights=None) -> MiScore:
    """
    Weighted mean of per-pair MI, recomputed from the raw counts.

    ``layer_weights`` overrides the scheme's per-layer weights (one per layer,
    or any description ``parse_layer_weights`` accepts); each pair then weighs
    the product of its two layers' weights. Sets with fewer than two clips
    score 0.
    """
    weights = _pair_weights(state, layer_weights)
    names = state.pair_names()
    if state.n <= 1:
        return MiScore(value=0.0, per_pair=[(name, 0.0) for name in names])
    values = np.array([mi_pair(table, state.n) for table in state.joint_counts])
    return MiScore(value=float((values * weights).sum()), per_pair=list(zip(names, values.tolist())))


def delta_score(state: ContingencyState, candidate, layer_weights=None) -> float:
    if layer_weights is not None:
        # Non-default weights: fall back to copy-and-recompute.
        before = score(state, layer_weights).value
        return score(state.copy().add_one(candidate), layer_weights).value - before
    return float(state.delta_scores(candidate)[0])


def cluster_histogram(table: AssignmentTable, space, rows=None) -> pd.DataFrame:
    """
    Cluster-ID counts of a subset in one space, sorted by decreasing count
    (ties by cluster id).
    """
    column = table.column_of(space)
    k = table.cardinalities[column]
    ids = table.ids[:, column] if rows is None else table.ids[np.asarray(rows, dtype=np.int64), column]
    counts = np.bincount(ids, minlength=k)
    frame = pd.DataFrame({"cluster_id": np.arange(k), "count": counts})
    frame = frame.sort_values(["count", "cluster_id"], ascending=[False, True], kind="stable").reset_index(drop=True)
    logger.debug(f"Histogram of {LayerKey.parse(space).name}: {int(counts.sum())} clips over {k} clusters")
    return frame
