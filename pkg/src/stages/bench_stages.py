from pathlib import Path

from src.base import BaseStage, ConfigError, StageRegistry
from src.bench.runner import AblationAxis, BenchSettings, MethodRegistry, ablate, run_bench
from src.bench.tasks import PRESETS, TaskKind, TaskSpec, preset


def add_task_arguments(parser):
    parser.add_argument('--task', default='sample_level',
                        help=f'Task kind ({", ".join(k.value for k in TaskKind)}) or preset ({", ".join(PRESETS)})')
    parser.add_argument('--classes', type=int, help='Number of classes')
    parser.add_argument('--per-class', type=int, default=1000, help='Pairs per class in each split')
    parser.add_argument('--noise', type=float, default=0.5, help='Layer noise scale')
    parser.add_argument('--easy-fraction', type=float, default=0.0, help='Share of positives with noise / 10')
    parser.add_argument('--class-spread', type=float, help='Within-class spread of the latent (default: preset value)')
    parser.add_argument('--negative-noise', type=float, help='Noise multiplier for negative pairs (default: preset value)')
    parser.add_argument('--layers', type=int, default=5, help='Layers per modality')
    parser.add_argument('--runs', type=int, default=5, help='Seeded repetitions')
    parser.add_argument('--fraction', type=float, default=0.5, help='Share of pairs selected')
    parser.add_argument('--b', type=int, default=100, help='Batch greedy batch size')
    parser.add_argument('--s', default='25', help='Batch greedy selection size')
    parser.add_argument('--pairing', default='combination')
    parser.add_argument('--weights', default='uniform')
    parser.add_argument('--centroids', type=int, help='Clusters per space (default: class count)')
    parser.add_argument('--algorithm', choices=['sgd', 'lloyd'], default='sgd')
    parser.add_argument('--contrastive-epochs', type=int, default=100)


def task_from_args(args) -> TaskSpec:
    overrides = {
        "per_class_cap": args.per_class,
        "noise_scale": args.noise,
        "easy_fraction": args.easy_fraction,
        "n_layers": args.layers,
        "seed": args.seed,
    }
    if args.classes is not None:
        overrides["n_classes"] = args.classes
    if args.class_spread is not None:
        overrides["class_spread"] = args.class_spread
    if args.negative_noise is not None:
        overrides["negative_noise_factor"] = args.negative_noise
    if args.task in PRESETS:
        return preset(args.task, **overrides)
    try:
        return TaskSpec(kind=TaskKind(args.task), **overrides)
    except ValueError as e:
        raise ConfigError(f"unknown task {args.task!r}") from e


def settings_from_args(args, workers: int = 1, selection_size=None) -> BenchSettings:
    return BenchSettings(
        runs=args.runs,
        selection_fraction=args.fraction,
        batch_size=args.b,
        selection_size=int(selection_size if selection_size is not None else args.s),
        pairing=args.pairing,
        layer_weights=args.weights,
        centroids=args.centroids,
        clustering_alg=args.algorithm,
        contrastive_epochs=args.contrastive_epochs,
        workers=workers,
    )


@StageRegistry.register("bench")
class BenchStage(BaseStage):
    """
    Correspondence retrieval on a seeded synthetic task.
    """
    help = "Run retrieval methods on a synthetic task and report precision with 99% intervals"

    @classmethod
    def add_arguments(cls, parser):
        add_task_arguments(parser)
        parser.add_argument('--methods', default='all', help=f'Comma separated subset of {MethodRegistry.available_methods()} or "all"')
        parser.add_argument('--out', required=True, help='JSON report; an aligned .txt table is written next to it')

    def run(self):
        report = run_bench(task_from_args(self.args), self.args.methods, settings_from_args(self.args, self.workers))
        report.save(self.add_artifact(Path(self.args.out)))
        self.log("info", "\n" + report.to_text())


@StageRegistry.register("ablate")
class AblateStage(BaseStage):
    """
    Sweep one setting with paired seeds.
    """
    help = "Ablation sweep over pairing, sb_ratio, centroids, clustering_alg, layer_weights or single_layer"

    @classmethod
    def add_arguments(cls, parser):
        add_task_arguments(parser)
        parser.add_argument('--axis', required=True, choices=[a.value for a in AblationAxis])
        parser.add_argument('--grid', help='Comma separated values (semicolons for layer_weights); sb_ratio uses the --s list')
        parser.add_argument('--methods', default='clustering')
        parser.add_argument('--out', required=True, help='TSV table; a .json with every report lands next to it')

    def run(self):
        axis = AblationAxis(self.args.axis)
        raw = self.args.s if axis == AblationAxis.SB_RATIO else self.args.grid
        if not raw:
            raise ConfigError(f"axis {axis.value} needs --grid")
        # Weight specs may contain commas, so that axis is split on semicolons.
        separator = ";" if axis == AblationAxis.LAYER_WEIGHTS else ","
        grid = [value.strip() for value in raw.split(separator) if value.strip()]
        if axis in (AblationAxis.SB_RATIO, AblationAxis.CENTROIDS, AblationAxis.SINGLE_LAYER):
            grid = [int(value) for value in grid]

        settings = settings_from_args(self.args, self.workers, selection_size=grid[0] if axis == AblationAxis.SB_RATIO else None)
        result = ablate(task_from_args(self.args), axis, grid, self.args.methods, settings)
        result.save(self.add_artifact(Path(self.args.out)))
        self.log("info", "\n" + result.to_frame().to_string(index=False))
