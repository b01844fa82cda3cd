"""
Pipeline configuration: a sectioned TOML file validated with pydantic.
Unknown keys anywhere are errors.
"""
import hashlib
import json
from pathlib import Path
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.base import ConfigError
from src.clustering.kmeans import KMeansConfig
from src.contrastive.heads import TrainConfig
from src.filters.metadata import FilterPolicy
from src.selection.greedy import LARGE_SCALE


class PathsSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    store: Path = Field(..., description="Feature store directory")
    out_dir: Path = Field(..., description="Directory receiving every artifact")
    similarity_dir: Optional[Path] = Field(None, description="<source_id>.txt similarity matrices for dedup")


class DedupSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = False
    k: int = Field(3, ge=1)
    max_iters: int = Field(100, ge=1)


class SelectSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: Literal["clustering", "contrastive"] = "clustering"
    target_size: int = Field(..., ge=0)
    batch_size: int = Field(LARGE_SCALE[0], ge=1)
    selection_size: int = Field(LARGE_SCALE[1], ge=1)
    pairing: str = "combination"
    layer_weights: str = "uniform"
    plain_greedy: bool = False

    @model_validator(mode="after")
    def _check_sizes(self):
        if self.selection_size > self.batch_size:
            raise ValueError("selection_size must not exceed batch_size")
        return self


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    workers: int = Field(1, ge=1)
    paths: PathsSection
    filter: FilterPolicy = FilterPolicy()
    dedup: DedupSection = DedupSection()
    cluster: KMeansConfig = KMeansConfig()
    select: SelectSection
    train: TrainConfig = TrainConfig()

    def check_paths(self):
        if not self.paths.store.is_dir():
            raise ConfigError(f"store directory {self.paths.store} does not exist")
        if self.dedup.enabled and (self.paths.similarity_dir is None or not self.paths.similarity_dir.is_dir()):
            raise ConfigError("dedup is enabled but paths.similarity_dir is missing")

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def load_config(path) -> PipelineConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from e

    try:
        return PipelineConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e
