import json
from pathlib import Path

from src.base import BaseStage, StageRegistry
from src.clustering.assignment import AssignmentTable
from src.config import SelectSection
from src.pipeline import run_selection, write_id_list
from src.selection.greedy import LARGE_SCALE
from src.stages.clustering_stages import add_scheme_arguments
from src.utils.seeding import derive_seed


@StageRegistry.register("select")
class SelectStage(BaseStage):
    """
    Batch-greedy (or plain greedy) maximisation of the MI objective.
    """
    help = "Select M clips from an assignment table"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument('--assignments', required=True, help='Assignment table TSV')
        parser.add_argument('--M', type=int, required=True, help='Target subset size')
        parser.add_argument('--b', type=int, default=LARGE_SCALE[0], help='Candidates sampled per round')
        parser.add_argument('--s', type=int, default=LARGE_SCALE[1], help='Clips taken per round')
        add_scheme_arguments(parser)
        parser.add_argument('--greedy', action='store_true', help='Plain greedy over every remaining clip')
        parser.add_argument('--out', required=True, help='Selected clip IDs, one per line; a .report.json lands next to it')

    def run(self):
        table = AssignmentTable.load(self.args.assignments)
        section = SelectSection(
            target_size=self.args.M,
            batch_size=self.args.b,
            selection_size=self.args.s,
            pairing=self.args.scheme,
            layer_weights=self.args.weights,
            plain_greedy=self.args.greedy,
        )
        result = run_selection(table, section, derive_seed(self.args.seed, self.name), self.workers)

        out = Path(self.args.out)
        write_id_list(self.add_artifact(out), result.chosen)
        payload = result.report()
        payload["config"] = section.model_dump(mode="json")
        report_path = self.add_artifact(out.with_name(out.name + ".report.json"))
        report_path.write_text(json.dumps(payload, indent=2))
        self.log("info", f"Selected {len(result.chosen)} clips in {len(result.round_sizes)} rounds")
