from .tasks import PRESETS, GeneratedTask, TaskKind, TaskSpec, TaskSplit, Transform, generate_task, preset
from .runner import (
    AblationAxis,
    AblationResult,
    BenchReport,
    BenchSettings,
    MethodOutcome,
    MethodRegistry,
    MethodReport,
    ablate,
    confidence_halfwidth,
    precision,
    run_bench,
)

__all__ = [
    'PRESETS',
    'AblationAxis',
    'AblationResult',
    'BenchReport',
    'BenchSettings',
    'GeneratedTask',
    'MethodOutcome',
    'MethodRegistry',
    'MethodReport',
    'TaskKind',
    'TaskSpec',
    'TaskSplit',
    'Transform',
    'ablate',
    'confidence_halfwidth',
    'generate_task',
    'precision',
    'preset',
    'run_bench',
]
