from src.base import BaseStage, StageRegistry, StoreError
from src.store.feature_store import ingest, verify_store


@StageRegistry.register("ingest")
class IngestStage(BaseStage):
    """
    Build a feature store from a metadata table and per-clip vector archives.
    """
    help = "Build a feature store from metadata.tsv plus <clip_id>.npz vector files"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--metadata', '--manifest', required=True, help='Metadata TSV (clip_id, source_id, duration_s, language, category, flags)')
        parser.add_argument('--vectors', required=True, help='Directory of <clip_id>.npz archives with audio_<l>/visual_<l> arrays')
        parser.add_argument('--out', required=True, help='Store directory to create')
        parser.add_argument('--verify', action='store_true', help='Re-read the store and check its checksum')

    def run(self):
        self.add_artifact(self.args.out)
        manifest = ingest(self.args.metadata, self.args.vectors, self.args.out)
        self.log("info", f"Wrote {manifest.clip_count} clips, {len(manifest.layer_spec)} layers to {self.args.out}")
        if self.args.verify and not verify_store(self.args.out):
            raise StoreError(f"checksum mismatch in freshly written store {self.args.out}")
