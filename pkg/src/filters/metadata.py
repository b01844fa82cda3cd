from concurrent.futures import ThreadPoolExecutor
from enum import Enum
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Iterable, Iterator, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.base import ConfigError
from src.store.feature_store import ClipRecord
from src.utils.logger_config import logger

DEFAULT_EXCLUDED_CATEGORIES = frozenset({"gaming", "animation", "screencast", "music"})
DEFAULT_ALLOWED_LANGUAGES = frozenset({"en", "es", "pt", "ru", "ja", "fr", "de", "ko"})

TOKEN_SPLIT = re.compile(r"[^\w]+", re.UNICODE)


class FilterReason(str, Enum):
    ACCEPTED = "accepted"
    DURATION = "duration"
    CATEGORY = "category"
    KEYWORD = "keyword"
    LANGUAGE = "language"
    MALFORMED = "malformed"


def _lowered(values) -> frozenset:
    return frozenset(str(v).strip().lower() for v in values)


class FilterPolicy(BaseModel):
    """
    Metadata rules applied before download
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    min_duration_s: float = Field(30.0, ge=0, allow_inf_nan=False)
    max_duration_s: float = Field(600.0, gt=0, allow_inf_nan=False)
    excluded_categories: frozenset[str] = DEFAULT_EXCLUDED_CATEGORIES
    excluded_keywords: frozenset[str] = frozenset()
    allowed_languages: frozenset[str] = DEFAULT_ALLOWED_LANGUAGES

    @field_validator("excluded_categories", "excluded_keywords", "allowed_languages")
    @classmethod
    def _normalise(cls, value):
        return _lowered(value)

    @model_validator(mode="after")
    def _check_bounds(self):
        if not self.min_duration_s < self.max_duration_s:
            raise ValueError("min_duration_s must be smaller than max_duration_s")
        return self

    @classmethod
    def from_toml(cls, path) -> "FilterPolicy":
        try:
            with open(path, "rb") as fh:
                return cls.model_validate(tomllib.load(fh))
        except (tomllib.TOMLDecodeError, ValidationError) as e:
            raise ConfigError(f"Invalid filter policy {path}: {e}") from e


class FilterDecision(BaseModel):
    clip_id: Optional[str]
    accepted: bool
    reason: FilterReason


def _tokens(text: str) -> Tuple[str, ...]:
    return tuple(t for t in TOKEN_SPLIT.split(text.lower()) if t)


def _keyword_hit(flags: Iterable[str], keywords: frozenset) -> bool:
    if not keywords:
        return False
    flag_tokens = [_tokens(flag) for flag in flags]
    for keyword in keywords:
        wanted = _tokens(keyword)
        if not wanted:
            continue
        width = len(wanted)
        for tokens in flag_tokens:
            if any(tokens[i:i + width] == wanted for i in range(len(tokens) - width + 1)):
                return True
    return False


def evaluate(record, policy: FilterPolicy) -> FilterDecision:
    """
    Decide one record. Rules are checked in the fixed order
    duration, category, keyword, language; the first failing rule is reported.
    """
    if not isinstance(record, ClipRecord):
        try:
            record = ClipRecord.model_validate(record)
        except (ValidationError, TypeError, ValueError):
            clip_id = record.get("clip_id") if isinstance(record, dict) else None
            return FilterDecision(clip_id=clip_id, accepted=False, reason=FilterReason.MALFORMED)

    if not policy.min_duration_s <= record.duration_s <= policy.max_duration_s:
        reason = FilterReason.DURATION
    elif record.category is not None and record.category.strip().lower() in policy.excluded_categories:
        reason = FilterReason.CATEGORY
    elif _keyword_hit(record.title_desc_flags, policy.excluded_keywords):
        reason = FilterReason.KEYWORD
    elif record.language is None or record.language.strip().lower() not in policy.allowed_languages:
        reason = FilterReason.LANGUAGE
    else:
        reason = FilterReason.ACCEPTED

    return FilterDecision(clip_id=record.clip_id, accepted=reason is FilterReason.ACCEPTED, reason=reason)


def filter_metadata(records: Iterable, policy: FilterPolicy, workers: int = 1) -> Iterator[FilterDecision]:
    """
    Apply the policy to a stream of records, preserving input order.
    """
    if workers <= 1:
        for record in records:
            yield evaluate(record, policy)
        return

    with ThreadPoolExecutor(max_workers=workers) as executor:
        yield from executor.map(lambda r: evaluate(r, policy), records, chunksize=256)


def decisions_frame(decisions: Iterable[FilterDecision]) -> pd.DataFrame:
    frame = pd.DataFrame(
        [d.model_dump(mode="json") for d in decisions],
        columns=["clip_id", "accepted", "reason"],
    )
    if not frame.empty:
        counts = frame["reason"].value_counts().to_dict()
        logger.info(f"Filter decisions: {counts}")
    return frame
