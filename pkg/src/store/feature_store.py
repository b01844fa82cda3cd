"""
Fixed-layout binary feature store.

A store is a directory holding ``features.bin`` (header + per-clip rows of
little-endian float32) and ``metadata.tsv`` (one line per clip, same order).
"""
from abc import ABC, abstractmethod
from enum import Enum
import csv
import hashlib
import os
import struct
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.base import StoreError
from src.utils.logger_config import logger

MAGIC = b"ACAVFS01"
FORMAT_VERSION = 1
HEADER_ALIGN = 64
FEATURES_FILE = "features.bin"
METADATA_FILE = "metadata.tsv"
ABSENT = "\\N"
METADATA_COLUMNS = ["clip_id", "source_id", "duration_s", "language", "category", "flags"]
METADATA_CHUNK = 10_000


class Modality(str, Enum):
    AUDIO = "audio"
    VISUAL = "visual"


MODALITY_CODES = {Modality.AUDIO: 0, Modality.VISUAL: 1}


class LayerKey(NamedTuple):
    modality: Modality
    layer: int

    @property
    def name(self) -> str:
        return f"{self.modality.value}_{self.layer}"

    @classmethod
    def parse(cls, value) -> "LayerKey":
        if isinstance(value, LayerKey):
            return value
        if isinstance(value, tuple):
            return cls(Modality(value[0]), int(value[1]))
        modality, _, layer = str(value).rpartition("_")
        try:
            return cls(Modality(modality), int(layer))
        except ValueError as e:
            raise StoreError(f"Invalid layer name {value!r}, expected '<audio|visual>_<index>'") from e


class ClipRecord(BaseModel):
    """
    Pydantic model for clip metadata
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    clip_id: str = Field(..., min_length=1, description="Unique identifier for the clip")
    source_id: str = Field(..., min_length=1, description="Parent full-length video")
    duration_s: float = Field(..., ge=0, allow_inf_nan=False, description="Clip duration in seconds")
    language: Optional[str] = Field(None, description="Precomputed language tag")
    category: Optional[str] = Field(None, description="Precomputed category tag")
    title_desc_flags: frozenset[str] = Field(default_factory=frozenset, description="Precomputed keyword hits")

    @field_validator("clip_id", "source_id", "language", "category")
    @classmethod
    def _no_separators(cls, value):
        if value is not None and any(ch in value for ch in ("\t", "\n", "\r", "\"")):
            raise ValueError("tabs, newlines and double quotes are not allowed in metadata fields")
        return value

    @field_validator("title_desc_flags")
    @classmethod
    def _flags_clean(cls, value):
        for flag in value:
            if not flag or any(ch in flag for ch in ("\t", "\n", "\r", ",", "\"")):
                raise ValueError(f"invalid flag {flag!r}")
        return value


class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    modality: Modality
    layer_index: int = Field(..., ge=1)
    dim: int = Field(..., gt=0)

    @property
    def key(self) -> LayerKey:
        return LayerKey(self.modality, self.layer_index)


class StoreManifest(BaseModel):
    clip_count: int = Field(..., ge=0)
    layer_spec: List[LayerSpec]
    format_version: int = FORMAT_VERSION
    checksum: int = Field(..., ge=0)

    def dims(self) -> Dict[LayerKey, int]:
        return {spec.key: spec.dim for spec in self.layer_spec}

    def keys(self, modality: Optional[Modality] = None) -> List[LayerKey]:
        return [s.key for s in self.layer_spec if modality is None or s.modality == modality]

    def penultimate(self, modality: Modality) -> LayerKey:
        """Highest layer index declared for a modality."""
        keys = self.keys(modality)
        if not keys:
            raise StoreError(f"Store declares no {modality.value} layers")
        return max(keys, key=lambda k: k.layer)

    @property
    def row_dim(self) -> int:
        return sum(spec.dim for spec in self.layer_spec)


def canonical_layer_spec(specs: Iterable[LayerSpec]) -> List[LayerSpec]:
    """Audio layers first, ascending index, then visual."""
    specs = list(specs)
    keys = [s.key for s in specs]
    if len(set(keys)) != len(keys):
        raise StoreError("layer_spec lists a (modality, layer) twice")
    return sorted(specs, key=lambda s: (MODALITY_CODES[s.modality], s.layer_index))


def _header_size(n_layers: int) -> int:
    raw = len(MAGIC) + 4 + 8 + 4 + n_layers * 9 + 8
    return ((raw + HEADER_ALIGN - 1) // HEADER_ALIGN) * HEADER_ALIGN


def _pack_header(manifest: StoreManifest) -> bytes:
    parts = [MAGIC, struct.pack("<IQI", manifest.format_version, manifest.clip_count, len(manifest.layer_spec))]
    for spec in manifest.layer_spec:
        parts.append(struct.pack("<BII", MODALITY_CODES[spec.modality], spec.layer_index, spec.dim))
    parts.append(struct.pack("<Q", manifest.checksum))
    raw = b"".join(parts)
    return raw + b"\x00" * (_header_size(len(manifest.layer_spec)) - len(raw))


def _unpack_header(fh) -> Tuple[StoreManifest, int]:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise StoreError(f"Not a feature store (magic {magic!r})")
    version, clip_count, n_layers = struct.unpack("<IQI", fh.read(16))
    if version != FORMAT_VERSION:
        raise StoreError(f"Unsupported store format_version {version}")
    codes = {v: k for k, v in MODALITY_CODES.items()}
    specs = []
    for _ in range(n_layers):
        code, layer_index, dim = struct.unpack("<BII", fh.read(9))
        specs.append(LayerSpec(modality=codes[code], layer_index=layer_index, dim=dim))
    (checksum,) = struct.unpack("<Q", fh.read(8))
    manifest = StoreManifest(clip_count=clip_count, layer_spec=specs, format_version=version, checksum=checksum)
    return manifest, _header_size(n_layers)


def _metadata_row(record: ClipRecord) -> dict:
    return {
        "clip_id": record.clip_id,
        "source_id": record.source_id,
        "duration_s": repr(float(record.duration_s)),
        "language": ABSENT if record.language is None else record.language,
        "category": ABSENT if record.category is None else record.category,
        "flags": ",".join(sorted(record.title_desc_flags)),
    }


def _record_from_row(row: Mapping[str, str]) -> ClipRecord:
    flags = row["flags"]
    return ClipRecord(
        clip_id=row["clip_id"],
        source_id=row["source_id"],
        duration_s=float(row["duration_s"]),
        language=None if row["language"] == ABSENT else row["language"],
        category=None if row["category"] == ABSENT else row["category"],
        title_desc_flags=frozenset(flags.split(",")) if flags else frozenset(),
    )


def _read_metadata_chunks(path, chunksize=METADATA_CHUNK) -> Iterator[pd.DataFrame]:
    reader = pd.read_csv(
        path,
        sep="\t",
        dtype=str,
        keep_default_na=False,
        na_values=[],
        quoting=csv.QUOTE_NONE,
        chunksize=chunksize,
    )
    with reader:
        for chunk in reader:
            yield chunk


def read_metadata(path) -> List[ClipRecord]:
    """
    Read a metadata sidecar (or any table in the sidecar format) into ClipRecords.
    """
    records = []
    for chunk in _read_metadata_chunks(path):
        missing = set(METADATA_COLUMNS) - set(chunk.columns)
        if missing:
            raise StoreError(f"Metadata table {path} lacks columns {sorted(missing)}")
        for row in chunk.to_dict("records"):
            records.append(_record_from_row(row))
    return records


def read_metadata_rows(path) -> Iterator[dict]:
    """Raw sidecar rows with absent markers mapped to None; no validation."""
    for chunk in _read_metadata_chunks(path):
        for row in chunk.to_dict("records"):
            flags = row.get("flags", "")
            yield {
                "clip_id": row.get("clip_id"),
                "source_id": row.get("source_id"),
                "duration_s": row.get("duration_s"),
                "language": None if row.get("language") == ABSENT else row.get("language"),
                "category": None if row.get("category") == ABSENT else row.get("category"),
                "title_desc_flags": flags.split(",") if flags else [],
            }


class BaseStore(ABC):
    """
    Abstract read interface shared by on-disk and in-memory stores
    """

    @property
    @abstractmethod
    def manifest(self) -> StoreManifest:
        pass

    @property
    @abstractmethod
    def clip_ids(self) -> List[str]:
        pass

    @abstractmethod
    def records(self) -> List[ClipRecord]:
        pass

    @abstractmethod
    def layer_matrix(self, modality, layer_index: int) -> np.ndarray:
        """
        Read-only (clip_count, dim) float32 view of one layer.
        """
        pass

    def __len__(self):
        return self.manifest.clip_count

    def _check_layer(self, modality, layer_index) -> LayerSpec:
        key = LayerKey(Modality(modality), int(layer_index))
        for spec in self.manifest.layer_spec:
            if spec.key == key:
                return spec
        raise StoreError(f"Unknown layer {key.name}")

    def iter_clip_ids(self) -> Iterator[str]:
        return iter(self.clip_ids)

    def indices_of(self, clip_ids: Iterable[str]) -> np.ndarray:
        wanted = list(clip_ids)
        lookup = {cid: i for i, cid in enumerate(self.clip_ids)}
        missing = [cid for cid in wanted if cid not in lookup]
        if missing:
            raise StoreError(f"Unknown clip_id(s): {missing[:5]}")
        return np.array([lookup[cid] for cid in wanted], dtype=np.int64)

    def read_layer(self, modality, layer_index: int, clip_ids: Optional[Iterable[str]] = None):
        """
        Stream (clip_id, vector) pairs of one layer in store order.

        Validation happens eagerly; the returned iterator copies one row at a time.
        """
        self._check_layer(modality, layer_index)
        matrix = self.layer_matrix(modality, layer_index)
        if clip_ids is None:
            return ((cid, np.array(matrix[i])) for i, cid in enumerate(self.iter_clip_ids()))

        wanted = self._resolve_subset(clip_ids)
        return ((cid, np.array(matrix[i])) for i, cid in wanted)

    def subset(self, indices) -> "MemoryStore":
        """Copy the given rows into an in-memory store."""
        indices = np.asarray(indices, dtype=np.int64)
        records = self.records()
        return MemoryStore(
            [records[i] for i in indices],
            {spec.key: np.asarray(self.layer_matrix(spec.modality, spec.layer_index)[indices]) for spec in self.manifest.layer_spec},
        )

    def _resolve_subset(self, clip_ids) -> List[Tuple[int, str]]:
        idx = self.indices_of(clip_ids)
        order = np.unique(idx)
        ids = self.clip_ids
        return [(int(i), ids[int(i)]) for i in order]


class FeatureStore(BaseStore):
    """
    Memory-mapped reader for a store directory. Safe to share between threads.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.features_path = self.path / FEATURES_FILE
        self.metadata_path = self.path / METADATA_FILE
        if not self.features_path.exists() or not self.metadata_path.exists():
            raise StoreError(f"{self.path} is not a feature store directory")

        with open(self.features_path, "rb") as fh:
            self._manifest, self._offset = _unpack_header(fh)

        expected = self._offset + self._manifest.clip_count * self._manifest.row_dim * 4
        actual = os.path.getsize(self.features_path)
        if actual != expected:
            raise StoreError(f"{self.features_path} has {actual} bytes, header implies {expected}")

        if self._manifest.clip_count:
            self._rows = np.memmap(
                self.features_path,
                dtype="<f4",
                mode="r",
                offset=self._offset,
                shape=(self._manifest.clip_count, self._manifest.row_dim),
            )
        else:
            self._rows = np.empty((0, self._manifest.row_dim), dtype="<f4")

        self._columns = {}
        start = 0
        for spec in self._manifest.layer_spec:
            self._columns[spec.key] = (start, start + spec.dim)
            start += spec.dim
        self._clip_ids = None

    @property
    def manifest(self) -> StoreManifest:
        return self._manifest

    @property
    def clip_ids(self) -> List[str]:
        if self._clip_ids is None:
            self._clip_ids = list(self.iter_clip_ids())
        return self._clip_ids

    def iter_clip_ids(self) -> Iterator[str]:
        if self._clip_ids is not None:
            yield from self._clip_ids
            return
        for chunk in _read_metadata_chunks(self.metadata_path):
            yield from chunk["clip_id"].tolist()

    def records(self) -> List[ClipRecord]:
        return read_metadata(self.metadata_path)

    def layer_matrix(self, modality, layer_index: int) -> np.ndarray:
        spec = self._check_layer(modality, layer_index)
        start, stop = self._columns[spec.key]
        return self._rows[:, start:stop]

    def _resolve_subset(self, clip_ids) -> List[Tuple[int, str]]:
        # Scan the sidecar in chunks so a small subset never loads every id.
        wanted = set(clip_ids)
        found = []
        position = 0
        for chunk in _read_metadata_chunks(self.metadata_path):
            for cid in chunk["clip_id"].tolist():
                if cid in wanted:
                    found.append((position, cid))
                position += 1
        missing = wanted - {cid for _, cid in found}
        if missing:
            raise StoreError(f"Unknown clip_id(s): {sorted(missing)[:5]}")
        return found


class MemoryStore(BaseStore):
    """
    In-memory store with the same read interface, used by the synthetic bench.
    """

    def __init__(self, records: Sequence[ClipRecord], features: Mapping):
        self._records = list(records)
        self._clip_ids = [r.clip_id for r in self._records]
        if len(set(self._clip_ids)) != len(self._clip_ids):
            raise StoreError("duplicate clip_id in MemoryStore")

        matrices = {}
        specs = []
        for key, matrix in features.items():
            key = LayerKey.parse(key)
            matrix = np.ascontiguousarray(matrix, dtype=np.float32)
            if matrix.ndim != 2 or matrix.shape[0] != len(self._records):
                raise StoreError(f"{key.name}: expected ({len(self._records)}, dim) matrix, got {matrix.shape}")
            if not np.isfinite(matrix).all():
                raise StoreError(f"{key.name}: non-finite feature value")
            matrix.setflags(write=False)
            matrices[key] = matrix
            specs.append(LayerSpec(modality=key.modality, layer_index=key.layer, dim=matrix.shape[1]))
        self._matrices = matrices
        self._manifest = StoreManifest(
            clip_count=len(self._records),
            layer_spec=canonical_layer_spec(specs),
            checksum=0,
        )

    @property
    def manifest(self) -> StoreManifest:
        return self._manifest

    @property
    def clip_ids(self) -> List[str]:
        return self._clip_ids

    def records(self) -> List[ClipRecord]:
        return list(self._records)

    def layer_matrix(self, modality, layer_index: int) -> np.ndarray:
        spec = self._check_layer(modality, layer_index)
        return self._matrices[spec.key]

    def items(self):
        """Iterate (record, {LayerKey: vector}) pairs, the input shape of write_store."""
        for i, record in enumerate(self._records):
            yield record, {key: matrix[i] for key, matrix in self._matrices.items()}


def _infer_layer_spec(features: Mapping) -> List[LayerSpec]:
    specs = []
    for key, vector in features.items():
        key = LayerKey.parse(key)
        specs.append(LayerSpec(modality=key.modality, layer_index=key.layer, dim=int(np.asarray(vector).size)))
    return canonical_layer_spec(specs)


def write_store(records: Iterable, path, layer_spec: Optional[Sequence[LayerSpec]] = None) -> StoreManifest:
    """
    Write a stream of (ClipRecord, {layer: vector}) pairs to a store directory.

    Args:
        records: iterable of (ClipRecord, mapping of LayerKey or 'audio_3'-style name to vector)
        path: store directory, created if needed
        layer_spec: optional explicit spec; inferred from the first record otherwise

    Returns:
        The manifest of the written store.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    features_tmp = path / (FEATURES_FILE + ".tmp")
    metadata_tmp = path / (METADATA_FILE + ".tmp")

    iterator = iter(records)
    first = next(iterator, None)
    if layer_spec is None:
        layer_spec = _infer_layer_spec(first[1]) if first is not None else []
    layer_spec = canonical_layer_spec(layer_spec)
    placeholder = StoreManifest(clip_count=0, layer_spec=layer_spec, checksum=0)

    hasher = hashlib.blake2b(digest_size=8)
    seen = set()
    pending = []
    count = 0
    header_written = False

    def flush_metadata():
        nonlocal header_written
        frame = pd.DataFrame(pending, columns=METADATA_COLUMNS)
        frame.to_csv(metadata_tmp, sep="\t", index=False, mode="a" if header_written else "w",
                     header=not header_written, quoting=csv.QUOTE_NONE, lineterminator="\n")
        header_written = True
        pending.clear()

    try:
        with open(features_tmp, "wb") as fh:
            fh.write(_pack_header(placeholder))
            stream = iterator if first is None else _chain_first(first, iterator)
            for record, features in stream:
                if not isinstance(record, ClipRecord):
                    record = ClipRecord.model_validate(record)
                if record.clip_id in seen:
                    raise StoreError(f"duplicate clip_id {record.clip_id!r}")
                seen.add(record.clip_id)
                row = _encode_row(record.clip_id, features, layer_spec)
                hasher.update(row.tobytes())
                fh.write(row.tobytes())
                pending.append(_metadata_row(record))
                count += 1
                if len(pending) >= METADATA_CHUNK:
                    flush_metadata()
            if pending or not header_written:
                flush_metadata()

            manifest = StoreManifest(
                clip_count=count,
                layer_spec=layer_spec,
                checksum=int.from_bytes(hasher.digest(), "little"),
            )
            fh.seek(0)
            fh.write(_pack_header(manifest))
    except Exception:
        features_tmp.unlink(missing_ok=True)
        metadata_tmp.unlink(missing_ok=True)
        raise

    os.replace(features_tmp, path / FEATURES_FILE)
    os.replace(metadata_tmp, path / METADATA_FILE)
    logger.info(f"Wrote store {path} with {count} clips and {len(layer_spec)} layers")
    return manifest


def _chain_first(first, iterator):
    yield first
    yield from iterator


def _encode_row(clip_id: str, features: Mapping, layer_spec: Sequence[LayerSpec]) -> np.ndarray:
    by_key = {LayerKey.parse(k): v for k, v in features.items()}
    expected = [spec.key for spec in layer_spec]
    if set(by_key) != set(expected):
        raise StoreError(f"{clip_id}: layers {sorted(k.name for k in by_key)} do not match layer_spec")
    parts = []
    for spec in layer_spec:
        vector = np.asarray(by_key[spec.key], dtype=np.float64).reshape(-1)
        if vector.size != spec.dim:
            raise StoreError(f"{clip_id}: {spec.key.name} has dim {vector.size}, layer_spec says {spec.dim}")
        encoded = vector.astype("<f4")
        if not np.isfinite(encoded).all():
            raise StoreError(f"{clip_id}: non-finite feature value in {spec.key.name}")
        parts.append(encoded)
    if not parts:
        return np.empty(0, dtype="<f4")
    return np.concatenate(parts)


def read_layer(path, modality, layer_index: int, clip_ids: Optional[Iterable[str]] = None):
    """
    Stream (clip_id, float32 vector) from a store directory in store order.
    """
    return FeatureStore(path).read_layer(modality, layer_index, clip_ids)


def verify_store(path) -> bool:
    """
    Recompute the payload checksum and compare it with the header.
    """
    store = FeatureStore(path)
    hasher = hashlib.blake2b(digest_size=8)
    rows = store._rows
    step = max(1, (1 << 22) // max(1, store.manifest.row_dim * 4))
    for start in range(0, len(rows), step):
        hasher.update(np.ascontiguousarray(rows[start:start + step]).tobytes())
    ok = int.from_bytes(hasher.digest(), "little") == store.manifest.checksum
    if not ok:
        logger.warning(f"Checksum mismatch for store {path}")
    return ok


def ingest(metadata_path, vector_dir, out) -> StoreManifest:
    """
    Build a store from a metadata table plus one ``<clip_id>.npz`` per clip.
    """
    vector_dir = Path(vector_dir)
    records = read_metadata(metadata_path)

    def stream():
        for record in records:
            vector_file = vector_dir / f"{record.clip_id}.npz"
            if not vector_file.exists():
                raise StoreError(f"Missing vector file {vector_file}")
            with np.load(vector_file) as archive:
                yield record, {LayerKey.parse(name): archive[name] for name in archive.files}

    return write_store(stream(), out)

