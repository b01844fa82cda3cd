import os
from pathlib import Path

from src.base import BaseStage, StageRegistry
from src.config import load_config
from src.pipeline import report_from_files, run_pipeline


@StageRegistry.register("report")
class ReportStage(BaseStage):
    """
    Cluster histograms of a selection against an equal-size random subset.
    """
    help = "Selected-vs-random cluster histograms, chi-square and top-10 concentration"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--selection', required=True, help='Selected clip IDs')
        parser.add_argument('--assignments', required=True, help='Assignment table TSV')
        parser.add_argument('--selection-report', help='JSON report of the select stage (objective curve)')
        parser.add_argument('--out', required=True, help='Output directory')

    def run(self):
        out = self.add_artifact(Path(self.args.out))
        summary = report_from_files(self.args.selection, self.args.assignments, out, self.args.seed, self.args.selection_report)
        self.log("info", f"Report covers {summary.selected} clips over {len(summary.spaces)} spaces")


@StageRegistry.register("run")
class RunStage(BaseStage):
    """
    Whole pipeline from a TOML config.
    """
    help = "Run filter, dedup, cluster, assign and select (or train-heads and rank) from a config file"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--config', required=True, help='Pipeline TOML config')

    def run(self):
        config = load_config(self.args.config)
        if self.args.workers is not None or os.environ.get("ACAV_WORKERS"):
            config = config.model_copy(update={"workers": self.workers})
        provenance = run_pipeline(config)
        self.log("info", f"Pipeline complete, config hash {provenance.config_hash[:12]}")
