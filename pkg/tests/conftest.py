import numpy as np
import pytest

from src.clustering.assignment import AssignmentTable
from src.store.feature_store import ClipRecord, FeatureStore, LayerKey, MemoryStore, Modality, write_store


def make_record(i, **overrides):
    fields = {
        "clip_id": f"clip{i:04d}",
        "source_id": f"video{i // 3:04d}",
        "duration_s": 60.0,
        "language": "en",
        "category": "travel",
    }
    fields.update(overrides)
    return ClipRecord(**fields)


def layered_features(rng, n, audio_dims=(4, 6), visual_dims=(5, 3)):
    features = {}
    for layer, dim in enumerate(audio_dims, start=1):
        features[f"audio_{layer}"] = rng.standard_normal((n, dim)).astype(np.float32)
    for layer, dim in enumerate(visual_dims, start=1):
        features[f"visual_{layer}"] = rng.standard_normal((n, dim)).astype(np.float32)
    return features


def random_table(rng, n=60, layers=5, k=4, clip_prefix="clip"):
    spaces = [LayerKey(Modality.AUDIO, l) for l in range(1, layers + 1)]
    spaces += [LayerKey(Modality.VISUAL, l) for l in range(1, layers + 1)]
    return AssignmentTable(
        clip_ids=[f"{clip_prefix}{i:05d}" for i in range(n)],
        spaces=spaces,
        cardinalities=[k] * len(spaces),
        ids=rng.integers(0, k, size=(n, len(spaces))),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def memory_store(rng):
    n = 40
    return MemoryStore([make_record(i) for i in range(n)], layered_features(rng, n))


@pytest.fixture
def disk_store(tmp_path, memory_store):
    path = tmp_path / "store"
    write_store(memory_store.items(), path)
    return FeatureStore(path)


@pytest.fixture
def make_table():
    return random_table
