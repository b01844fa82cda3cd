from .feature_store import (
    BaseStore,
    ClipRecord,
    FeatureStore,
    LayerKey,
    LayerSpec,
    MemoryStore,
    Modality,
    StoreManifest,
    ingest,
    read_layer,
    read_metadata,
    verify_store,
    write_store,
)

__all__ = [
    'BaseStore',
    'ClipRecord',
    'FeatureStore',
    'LayerKey',
    'LayerSpec',
    'MemoryStore',
    'Modality',
    'StoreManifest',
    'ingest',
    'read_layer',
    'read_metadata',
    'verify_store',
    'write_store',
]
