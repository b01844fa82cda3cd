from pathlib import Path

from src.base import BaseStage, StageRegistry
from src.filters.metadata import FilterPolicy
from src.pipeline import read_id_list, run_dedup, run_filter, write_id_list
from src.store.feature_store import FeatureStore, read_metadata_rows


@StageRegistry.register("filter")
class FilterStage(BaseStage):
    """
    Accept or reject clips by duration, category, keyword and language.
    """
    help = "Apply metadata rules and write the decision table"

    @classmethod
    def add_arguments(cls, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--store', help='Feature store directory')
        source.add_argument('--metadata', help='Metadata TSV; malformed rows are rejected, not fatal')
        parser.add_argument('--policy', help='Flat TOML filter policy (defaults apply when omitted)')
        parser.add_argument('--out', required=True, help='Decision table (clip_id, accepted, reason)')
        parser.add_argument('--ids-out', help='Optional list of accepted clip IDs')

    def run(self):
        policy = FilterPolicy.from_toml(self.args.policy) if self.args.policy else FilterPolicy()
        if self.args.store:
            records = FeatureStore(self.args.store).records()
        else:
            records = read_metadata_rows(self.args.metadata)

        frame, accepted = run_filter(records, policy, self.workers)
        frame.to_csv(self.add_artifact(self.args.out), sep="\t", index=False, lineterminator="\n")
        if self.args.ids_out:
            write_id_list(self.add_artifact(self.args.ids_out), accepted)
        self.log("info", f"Accepted {len(accepted)} of {len(frame)} clips")


@StageRegistry.register("dedup")
class DedupStage(BaseStage):
    """
    Keep at most k mutually dissimilar clips per source video.
    """
    help = "Per-source local search for the k least similar clips"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--store', required=True, help='Feature store directory')
        parser.add_argument('--ids', help='Candidate clip IDs (default: every clip in the store)')
        parser.add_argument('--similarity-dir', required=True, help='Directory of <source_id>.txt similarity matrices')
        parser.add_argument('--k', type=int, default=3, help='Clips kept per source video')
        parser.add_argument('--max-iters', type=int, default=100, help='Swap budget per source')
        parser.add_argument('--out', required=True, help='Kept clip IDs')

    def run(self):
        store = FeatureStore(self.args.store)
        candidates = read_id_list(self.args.ids) if self.args.ids else list(store.clip_ids)
        kept = run_dedup(store, candidates, Path(self.args.similarity_dir), self.args.k, self.args.max_iters)
        write_id_list(self.add_artifact(self.args.out), kept)
        self.log("info", f"Kept {len(kept)} of {len(candidates)} clips")
