from .metadata import FilterDecision, FilterPolicy, FilterReason, evaluate, filter_metadata
from .dedup import DedupResult, SimilarityMatrix, dedup_sources, select_clips

__all__ = [
    'DedupResult',
    'FilterDecision',
    'FilterPolicy',
    'FilterReason',
    'SimilarityMatrix',
    'dedup_sources',
    'evaluate',
    'filter_metadata',
    'select_clips',
]
