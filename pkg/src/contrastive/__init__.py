from .heads import (
    ContrastiveHeads,
    ProjectionHead,
    TrainConfig,
    contrastive_loss,
    embed,
    init_heads,
    load_heads,
    save_heads,
    score_pairs,
    train_heads,
)
from .pca import PcaModel, RankingMetric, fit_baseline_pcas, fit_pca, pair_similarity, project, ranking_baseline

__all__ = [
    'ContrastiveHeads',
    'PcaModel',
    'ProjectionHead',
    'RankingMetric',
    'TrainConfig',
    'contrastive_loss',
    'embed',
    'fit_baseline_pcas',
    'fit_pca',
    'init_heads',
    'load_heads',
    'pair_similarity',
    'project',
    'ranking_baseline',
    'save_heads',
    'score_pairs',
    'train_heads',
]
