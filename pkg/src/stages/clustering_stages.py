import json
from pathlib import Path

from src.base import BaseStage, StageRegistry
from src.clustering.assignment import AssignmentTable, build_assignment_table, load_clusterings, save_clusterings
from src.clustering.kmeans import KMeansConfig, fit_store_spaces, quantization_error
from src.mi.estimator import PairingScheme, build_state, score
from src.pipeline import read_id_list, restrict_store
from src.store.feature_store import FeatureStore
from src.utils.seeding import derive_seed


def store_from_args(args):
    store = FeatureStore(args.store)
    ids = read_id_list(args.ids) if getattr(args, 'ids', None) else None
    return restrict_store(store, ids)


def add_scheme_arguments(parser):
    parser.add_argument('--scheme', default='combination',
                        help='Pairing scheme: diagonal, bipartite, combination or single(<layer>)')
    parser.add_argument('--weights', default='uniform',
                        help='Layer weights: uniform, linear(k), exp(k) or a comma separated list')


def scheme_from_args(args, table: AssignmentTable) -> PairingScheme:
    n_layers = max((space.layer for space in table.spaces), default=1)
    return PairingScheme.parse(args.scheme, args.weights, n_layers)


@StageRegistry.register("cluster")
class ClusterStage(BaseStage):
    """
    Fit one k-means per (modality, layer) space of a store.
    """
    help = "Fit per-space k-means (mini-batch SGD or Lloyd)"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--store', required=True, help='Feature store directory')
        parser.add_argument('--ids', help='Restrict to these clip IDs')
        parser.add_argument('--k', type=int, default=500, help='Centroids per space')
        parser.add_argument('--lr', type=float, default=1e-2, help='SGD step size')
        parser.add_argument('--epochs', type=int, default=100, help='SGD passes over the data')
        parser.add_argument('--batch-size', type=int, default=100_000, help='SGD mini-batch size')
        parser.add_argument('--algorithm', choices=['sgd', 'lloyd'], default='sgd')
        parser.add_argument('--standardize', action='store_true', help='Per-space z-scoring before clustering')
        parser.add_argument('--out', required=True, help='Directory receiving <space>.kmeans files')

    def run(self):
        store = store_from_args(self.args)
        config = KMeansConfig(
            k=self.args.k,
            lr=self.args.lr,
            epochs=self.args.epochs,
            batch_size=self.args.batch_size,
            algorithm=self.args.algorithm,
            standardize=self.args.standardize,
            seed=derive_seed(self.args.seed, self.name),
        )
        clusterings = fit_store_spaces(store, config, workers=self.workers)
        save_clusterings(clusterings, self.add_artifact(Path(self.args.out)))
        for key, clustering in clusterings.items():
            error = quantization_error(clustering, store.layer_matrix(key.modality, key.layer))
            self.log("info", f"{key.name}: quantization error {error:.5f}, {clustering.reinit_count} reinitialisations")


@StageRegistry.register("assign")
class AssignStage(BaseStage):
    """
    Vector-quantise every clip in every space.
    """
    help = "Write the cluster-ID assignment table"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--store', required=True, help='Feature store directory')
        parser.add_argument('--ids', help='Restrict to these clip IDs')
        parser.add_argument('--clusterings', required=True, help='Directory written by the cluster stage')
        parser.add_argument('--out', required=True, help='Assignment table TSV')

    def run(self):
        store = store_from_args(self.args)
        table = build_assignment_table(store, load_clusterings(self.args.clusterings))
        table.save(self.add_artifact(self.args.out))


@StageRegistry.register("score")
class ScoreStage(BaseStage):
    """
    Objective value of a clip subset.
    """
    help = "Clustering-based MI objective of a subset"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--assignments', required=True, help='Assignment table TSV')
        parser.add_argument('--ids', help='Subset to score (default: the whole table)')
        add_scheme_arguments(parser)
        parser.add_argument('--out', help='Optional JSON with the total and per-pair MI')

    def run(self):
        table = AssignmentTable.load(self.args.assignments)
        rows = table.rows_of(read_id_list(self.args.ids)) if self.args.ids else None
        state = build_state(table, scheme_from_args(self.args, table), rows)
        result = score(state)
        self.log("info", f"F = {result.value:.6f} nats over {state.n} clips and {len(result.per_pair)} pairs")
        if self.args.out:
            payload = {
                "clips": state.n,
                "value": result.value,
                "per_pair": [{"pair": list(names), "mi": mi} for names, mi in result.per_pair],
            }
            Path(self.add_artifact(self.args.out)).write_text(json.dumps(payload, indent=2))
