from .kmeans import (
    Clustering,
    KMeansConfig,
    assign,
    fit,
    fit_lloyd,
    fit_sgd,
    fit_store_spaces,
    load_clustering,
    quantization_error,
    save_clustering,
)
from .assignment import AssignmentTable, build_assignment_table, load_clusterings, save_clusterings

__all__ = [
    'AssignmentTable',
    'Clustering',
    'KMeansConfig',
    'assign',
    'build_assignment_table',
    'fit',
    'fit_lloyd',
    'fit_sgd',
    'fit_store_spaces',
    'load_clustering',
    'load_clusterings',
    'quantization_error',
    'save_clustering',
    'save_clusterings',
]
