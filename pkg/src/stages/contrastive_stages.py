import pandas as pd

from src.base import BaseStage, ConfigError, StageRegistry
from src.contrastive.heads import TrainConfig, load_heads, save_heads, score_pairs, train_heads
from src.contrastive.pca import PCA_DIM, RankingMetric, fit_baseline_pcas, ranking_baseline
from src.pipeline import write_id_list
from src.selection.greedy import rank_select
from src.stages.clustering_stages import store_from_args
from src.utils.seeding import derive_seed


def _write_scores(path, clip_ids, scores):
    pd.DataFrame({"clip_id": clip_ids, "score": scores}).to_csv(path, sep="\t", index=False, lineterminator="\n")


@StageRegistry.register("train-heads")
class TrainHeadsStage(BaseStage):
    """
    Train the audio and visual projection heads with the contrastive loss.
    """
    help = "Train linear projection heads on penultimate features"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--store', required=True, help='Feature store directory')
        parser.add_argument('--ids', help='Restrict to these clip IDs')
        parser.add_argument('--tau', type=float, default=0.1, help='Temperature')
        parser.add_argument('--nb', type=int, default=1024, help='Mini-batch size')
        parser.add_argument('--epochs', type=int, default=3)
        parser.add_argument('--lr', type=float, default=2e-4)
        parser.add_argument('--warmup-epochs', type=int, default=0)
        parser.add_argument('--out-dim', type=int, default=128, help='Embedding dimension')
        parser.add_argument('--out', required=True, help='Heads file (torch.save)')

    def run(self):
        store = store_from_args(self.args)
        config = TrainConfig(
            temperature=self.args.tau,
            batch_size=self.args.nb,
            epochs=self.args.epochs,
            lr=self.args.lr,
            warmup_epochs=self.args.warmup_epochs,
            out_dim=self.args.out_dim,
            seed=derive_seed(self.args.seed, self.name),
        )
        heads = train_heads(store, config)
        save_heads(heads, self.add_artifact(self.args.out))


@StageRegistry.register("rank")
class RankStage(BaseStage):
    """
    Rank clips by the cosine similarity of their projected embeddings.
    """
    help = "Top-N clips by contrastive similarity"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--store', required=True, help='Feature store directory')
        parser.add_argument('--ids', help='Restrict to these clip IDs')
        parser.add_argument('--heads', required=True, help='File written by train-heads')
        parser.add_argument('--N', type=int, required=True, help='Clips to keep')
        parser.add_argument('--scores', help='Optional per-clip score table')
        parser.add_argument('--out', required=True, help='Selected clip IDs')

    def run(self):
        store = store_from_args(self.args)
        scores = score_pairs(load_heads(self.args.heads), store)
        if self.args.scores:
            _write_scores(self.add_artifact(self.args.scores), store.clip_ids, scores)
        rows = rank_select(scores, self.args.N)
        write_id_list(self.add_artifact(self.args.out), [store.clip_ids[i] for i in rows])
        self.log("info", f"Kept {len(rows)} of {len(store)} clips")


@StageRegistry.register("baseline-rank")
class BaselineRankStage(BaseStage):
    """
    Similarity ranking between PCA-reduced audio and visual features.
    """
    help = "PCA ranking baselines (inner, cosine, neg_l2)"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--store', required=True, help='Feature store directory')
        parser.add_argument('--ids', help='Restrict to these clip IDs')
        parser.add_argument('--metric', choices=[m.value for m in RankingMetric], default='cosine')
        parser.add_argument('--dim', type=int, default=PCA_DIM, help='PCA output dimension')
        parser.add_argument('--N', type=int, help='Also write the top-N clip IDs')
        parser.add_argument('--ids-out', help='Where the top-N IDs go')
        parser.add_argument('--out', required=True, help='Per-clip score table')

    def run(self):
        store = store_from_args(self.args)
        scores = ranking_baseline(store, self.args.metric, fit_baseline_pcas(store, self.args.dim))
        _write_scores(self.add_artifact(self.args.out), store.clip_ids, scores)
        if self.args.N is not None:
            if not self.args.ids_out:
                raise ConfigError("--N needs --ids-out")
            rows = rank_select(scores, self.args.N)
            write_id_list(self.add_artifact(self.args.ids_out), [store.clip_ids[i] for i in rows])
