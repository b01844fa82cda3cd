import math

import numpy as np
import pytest

from src.base import EstimatorError
from src.mi.estimator import (
    ContingencyState,
    PairingKind,
    PairingScheme,
    add_clip,
    build_state,
    cluster_histogram,
    delta_score,
    mi_pair,
    parse_layer_weights,
    score,
)


def _brute_force_mi(x, y):
    n = len(x)
    value = 0.0
    for a in set(x):
        for b in set(y):
            joint = sum(1 for i in range(n) if x[i] == a and y[i] == b)
            if joint:
                pa = sum(1 for v in x if v == a) / n
                pb = sum(1 for v in y if v == b) / n
                value += joint / n * math.log((joint / n) / (pa * pb))
    return value


def _joint(x, y, kx, ky):
    table = np.zeros((kx, ky))
    np.add.at(table, (x, y), 1)
    return table


def test_independent_partitions_have_zero_mi():
    table = np.outer([2, 3, 5], [1, 4]) * 3
    assert mi_pair(table) == pytest.approx(0.0, abs=1e-12)


def test_identical_uniform_partitions_reach_log_k():
    assert mi_pair(np.eye(6) * 7) == pytest.approx(math.log(6))


def test_mi_pair_matches_brute_force(rng):
    for _ in range(200):
        n = int(rng.integers(2, 40))
        kx, ky = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        x = rng.integers(0, kx, size=n)
        y = rng.integers(0, ky, size=n)
        assert mi_pair(_joint(x, y, kx, ky)) == pytest.approx(_brute_force_mi(x.tolist(), y.tolist()), abs=1e-10)


def test_mi_pair_rejects_empty_and_mismatched_tables():
    with pytest.raises(EstimatorError):
        mi_pair(np.zeros((2, 2)))
    with pytest.raises(EstimatorError):
        mi_pair(np.ones((2, 2)), n=5)


def test_scheme_pair_counts(rng, make_table):
    table = make_table(rng, n=5, layers=5)
    counts = {
        "combination": 45,
        "bipartite": 25,
        "diagonal": 5,
        "single(3)": 1,
    }
    for kind, expected in counts.items():
        assert len(PairingScheme.parse(kind).pairs(table.spaces)) == expected
    single = PairingScheme.parse("single(3)")
    assert single.kind == PairingKind.SINGLE
    names = [(table.spaces[a].name, table.spaces[b].name) for a, b in single.pairs(table.spaces)]
    assert names == [("audio_3", "visual_3")]
    with pytest.raises(EstimatorError):
        PairingScheme.parse("single(9)").pairs(table.spaces)


@pytest.mark.parametrize(
    "spec, expected",
    [
        ("linear(0.5)", (0.1, 0.5, 1.0, 1.5, 1.9)),
        ("linear(0.25)", (0.5, 0.75, 1.0, 1.25, 1.5)),
        ("1,2,3,4,5", (1.0, 2.0, 3.0, 4.0, 5.0)),
    ],
)
def test_layer_weight_parsing(spec, expected):
    assert parse_layer_weights(spec, 5) == pytest.approx(expected)


def test_layer_weight_parsing_edge_cases():
    assert parse_layer_weights("uniform", 5) is None
    exp = parse_layer_weights("exp(1)", 3)
    assert exp == pytest.approx((math.exp(-1), 1.0, math.e))
    for bad in ("1,2", "0,1,1", "steep", "1,nan,1"):
        with pytest.raises(EstimatorError):
            parse_layer_weights(bad, 3)


def test_pair_weights_are_normalised(rng, make_table):
    table = make_table(rng, n=5, layers=5)
    scheme = PairingScheme.parse("diagonal", "linear(0.5)")
    weights = scheme.pair_weights(table.spaces, scheme.pairs(table.spaces))
    assert weights.sum() == pytest.approx(1.0)
    raw = np.array([0.1, 0.5, 1.0, 1.5, 1.9]) ** 2
    np.testing.assert_allclose(weights, raw / raw.sum())


def test_small_sets_score_zero(rng, make_table):
    table = make_table(rng, n=10)
    scheme = PairingScheme()
    assert score(build_state(table, scheme, rows=[])).value == 0.0
    assert score(build_state(table, scheme, rows=[3])).value == 0.0
    assert build_state(table, scheme, rows=[3]).cached_value() == 0.0


def test_score_is_weighted_mean_of_pair_mi(rng, make_table):
    table = make_table(rng, n=80, layers=2, k=3)
    scheme = PairingScheme.parse("bipartite")
    state = build_state(table, scheme)
    result = score(state)
    per_pair = []
    for a, b in scheme.pairs(table.spaces):
        per_pair.append(_brute_force_mi(table.ids[:, a].tolist(), table.ids[:, b].tolist()))
    assert result.value == pytest.approx(np.mean(per_pair), abs=1e-10)
    assert [name for name, _ in result.per_pair] == [
        ("audio_1", "visual_1"), ("audio_1", "visual_2"), ("audio_2", "visual_1"), ("audio_2", "visual_2"),
    ]


def test_incremental_insertion_matches_rebuild(rng, make_table):
    table = make_table(rng, n=1000, k=6)
    scheme = PairingScheme.parse("combination", "linear(0.25)")
    state = ContingencyState.for_table(table, scheme)
    for row in range(1000):
        add_clip(state, table.ids[row])
        if row % 97 == 0 or row == 999:
            rebuilt = build_state(table, scheme, rows=range(row + 1))
            assert state.cached_value() == pytest.approx(score(rebuilt).value, abs=1e-9)
            assert score(state).value == pytest.approx(score(rebuilt).value, abs=1e-12)
    for mine, theirs in zip(state.joint_counts, build_state(table, scheme).joint_counts):
        np.testing.assert_array_equal(mine, theirs)


def test_delta_scores_equal_score_differences(rng, make_table):
    table = make_table(rng, n=200, k=5)
    scheme = PairingScheme.parse("bipartite", "linear(0.5)")
    state = build_state(table, scheme, rows=range(50))
    before = score(state).value
    deltas = state.delta_scores(table.ids[50:])
    for row in range(50, 200, 10):
        after = score(state.copy().add_one(table.ids[row])).value
        assert deltas[row - 50] == pytest.approx(after - before, abs=1e-9)
        assert delta_score(state, table.ids[row]) == pytest.approx(after - before, abs=1e-9)
    assert state.n == 50


def test_delta_score_with_layer_weights(rng, make_table):
    table = make_table(rng, n=40, layers=2, k=3)
    state = build_state(table, PairingScheme.parse("combination"), rows=range(20))
    weighted = build_state(table, PairingScheme.parse("combination", "1,3"), rows=range(20))
    after = build_state(table, PairingScheme.parse("combination", "1,3"), rows=range(21))
    expected = score(after).value - score(weighted).value
    assert delta_score(state, table.ids[20], (1.0, 3.0)) == pytest.approx(expected, abs=1e-12)
    assert delta_score(state, table.ids[20], "uniform") == pytest.approx(delta_score(state, table.ids[20]), abs=1e-12)


def test_score_expands_layer_weights_to_pairs(rng, make_table):
    table = make_table(rng, n=60, layers=2, k=3)
    state = build_state(table, PairingScheme.parse("diagonal"))
    per_pair = dict(score(state).per_pair)
    layer_1 = per_pair[("audio_1", "visual_1")]
    layer_2 = per_pair[("audio_2", "visual_2")]
    # Pair weights are products of layer weights: 1 * 1 and 2 * 2.
    assert score(state, [1.0, 2.0]).value == pytest.approx((layer_1 + 4.0 * layer_2) / 5.0, abs=1e-12)
    with pytest.raises(EstimatorError):
        score(state, [1.0, 2.0, 3.0])
    with pytest.raises(EstimatorError):
        score(state, [1.0, 0.0])


def test_relabelling_clusters_leaves_score_unchanged(rng, make_table):
    table = make_table(rng, n=150, layers=3, k=5)
    original = score(build_state(table, PairingScheme())).value
    permuted = table.subset(range(150))
    for column in range(permuted.ids.shape[1]):
        permuted.ids[:, column] = rng.permutation(5)[permuted.ids[:, column]]
    assert score(build_state(permuted, PairingScheme())).value == pytest.approx(original, abs=1e-12)


def test_invalid_cluster_ids_are_rejected(rng, make_table):
    table = make_table(rng, n=5, layers=1, k=3)
    state = build_state(table, PairingScheme())
    with pytest.raises(EstimatorError):
        state.add_one([0, 3])
    with pytest.raises(EstimatorError):
        state.add_one([0, 1, 2])


def test_cluster_histogram_orders_by_count(make_table, rng):
    table = make_table(rng, n=4, layers=1, k=4)
    table.ids[:, 0] = [2, 2, 0, 3]
    histogram = cluster_histogram(table, "audio_1")
    assert histogram["cluster_id"].tolist() == [2, 0, 3, 1]
    assert histogram["count"].tolist() == [2, 1, 1, 0]
    subset = cluster_histogram(table, "audio_1", rows=[2, 3])
    assert subset["count"].sum() == 2
