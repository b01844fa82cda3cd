from .estimator import (
    ContingencyState,
    MiScore,
    PairingKind,
    PairingScheme,
    add_clip,
    build_state,
    cluster_histogram,
    delta_score,
    mi_pair,
    parse_layer_weights,
    score,
)

__all__ = [
    'ContingencyState',
    'MiScore',
    'PairingKind',
    'PairingScheme',
    'add_clip',
    'build_state',
    'cluster_histogram',
    'delta_score',
    'mi_pair',
    'parse_layer_weights',
    'score',
]
