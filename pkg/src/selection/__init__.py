from .greedy import LARGE_SCALE, SMALL_SCALE, SelectionConfig, SelectionResult, batch_greedy, greedy, rank_select

__all__ = [
    'LARGE_SCALE',
    'SMALL_SCALE',
    'SelectionConfig',
    'SelectionResult',
    'batch_greedy',
    'greedy',
    'rank_select',
]
