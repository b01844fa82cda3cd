# Import all stage modules here to ensure registration; the order fixes the exit codes.
from .store_stages import IngestStage
from .filter_stages import DedupStage, FilterStage
from .clustering_stages import AssignStage, ClusterStage, ScoreStage
from .selection_stages import SelectStage
from .contrastive_stages import BaselineRankStage, RankStage, TrainHeadsStage
from .bench_stages import AblateStage, BenchStage
from .pipeline_stages import ReportStage, RunStage

__all__ = [
    'IngestStage',
    'FilterStage',
    'DedupStage',
    'ClusterStage',
    'AssignStage',
    'ScoreStage',
    'SelectStage',
    'TrainHeadsStage',
    'RankStage',
    'BaselineRankStage',
    'BenchStage',
    'AblateStage',
    'ReportStage',
    'RunStage',
]
