import numpy as np
import pandas as pd
import pytest

from src.base import ClusteringError
from src.clustering.assignment import AssignmentTable, build_assignment_table, load_clusterings, save_clusterings
from src.clustering.kmeans import KMeansConfig, assign, fit_store_spaces
from src.store.feature_store import LayerKey, Modality


def test_build_table_follows_store_layer_order(memory_store):
    clusterings = fit_store_spaces(memory_store, KMeansConfig(k=4, epochs=2, batch_size=8))
    table = build_assignment_table(memory_store, clusterings)
    assert [s.name for s in table.spaces] == ["audio_1", "audio_2", "visual_1", "visual_2"]
    assert table.clip_ids == memory_store.clip_ids
    assert table.cardinalities == [4, 4, 4, 4]
    key = LayerKey(Modality.VISUAL, 2)
    expected = assign(clusterings[key], memory_store.layer_matrix(Modality.VISUAL, 2))
    np.testing.assert_array_equal(table.ids[:, table.column_of("visual_2")], expected)


def test_missing_clustering_is_an_error(memory_store):
    clusterings = fit_store_spaces(memory_store, KMeansConfig(k=2, epochs=1, batch_size=8),
                                   keys=[LayerKey(Modality.AUDIO, 1)])
    with pytest.raises(ClusteringError):
        build_assignment_table(memory_store, clusterings)


def test_save_and_load_table(tmp_path, rng, make_table):
    table = make_table(rng, n=12, layers=2, k=3)
    path = tmp_path / "assignments.tsv"
    table.save(path)
    header = path.read_text().splitlines()[0].split("\t")
    assert header == ["clip_id", "audio_1:3", "audio_2:3", "visual_1:3", "visual_2:3"]

    loaded = AssignmentTable.load(path)
    assert loaded.clip_ids == table.clip_ids
    assert loaded.spaces == table.spaces
    np.testing.assert_array_equal(loaded.ids, table.ids)


def test_load_rejects_bad_tables(tmp_path):
    path = tmp_path / "bad.tsv"
    pd.DataFrame({"clip": ["a"], "audio_1:2": [0]}).to_csv(path, sep="\t", index=False)
    with pytest.raises(ClusteringError):
        AssignmentTable.load(path)
    pd.DataFrame({"clip_id": ["a"], "audio_1:2": [5]}).to_csv(path, sep="\t", index=False)
    with pytest.raises(ClusteringError):
        AssignmentTable.load(path)


def test_table_validation():
    spaces = [LayerKey(Modality.AUDIO, 1)]
    with pytest.raises(ClusteringError):
        AssignmentTable(clip_ids=["a", "a"], spaces=spaces, cardinalities=[2], ids=[[0], [1]])
    with pytest.raises(ClusteringError):
        AssignmentTable(clip_ids=["a"], spaces=spaces, cardinalities=[2, 2], ids=[[0]])


def test_rows_and_subset(rng, make_table):
    table = make_table(rng, n=10, layers=1, k=3)
    rows = table.rows_of(["clip00007", "clip00002"])
    assert rows.tolist() == [7, 2]
    sub = table.subset(rows)
    assert sub.clip_ids == ["clip00007", "clip00002"]
    np.testing.assert_array_equal(sub.ids, table.ids[[7, 2]])
    with pytest.raises(ClusteringError):
        table.rows_of(["missing"])
    with pytest.raises(ClusteringError):
        table.column_of("visual_4")


def test_clusterings_directory_round_trip(tmp_path, memory_store):
    clusterings = fit_store_spaces(memory_store, KMeansConfig(k=3, epochs=1, batch_size=8))
    save_clusterings(clusterings, tmp_path / "clusterings")
    loaded = load_clusterings(tmp_path / "clusterings")
    assert set(loaded) == set(clusterings)
    first = build_assignment_table(memory_store, clusterings)
    second = build_assignment_table(memory_store, loaded)
    np.testing.assert_array_equal(first.ids, second.ids)
    with pytest.raises(ClusteringError):
        load_clusterings(tmp_path)
