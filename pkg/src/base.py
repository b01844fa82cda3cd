from abc import ABC, abstractmethod
import argparse
import os
import time
import traceback

from src.utils.logger_config import logger


class CurationError(Exception):
    pass


class StoreError(CurationError):
    pass


class FilterError(CurationError):
    pass


class ClusteringError(CurationError):
    pass


class EstimatorError(CurationError):
    pass


class SelectionError(CurationError):
    pass


class TrainingError(CurationError):
    pass


class BenchError(CurationError):
    pass


class ConfigError(CurationError):
    pass


class StageError(CurationError):
    """
    Carries the name of the pipeline stage that failed along with its cause.
    """
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STAGE_BASE = 10


class StageRegistry:
    _stages = {}

    @classmethod
    def register(cls, name):
        def decorator(stage_class):
            stage_class.name = name
            cls._stages[name.lower()] = stage_class
            return stage_class
        return decorator

    @classmethod
    def get_stage(cls, name):
        return cls._stages.get(name.lower())

    @classmethod
    def available_stages(cls):
        return list(cls._stages.keys())

    @classmethod
    def exit_code(cls, name):
        """
        Non-zero exit status identifying a failing stage.
        """
        names = cls.available_stages()
        if name.lower() not in names:
            return EXIT_STAGE_BASE - 1
        return EXIT_STAGE_BASE + names.index(name.lower())


def positive_workers(value=None):
    env = os.environ.get("ACAV_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, int(value or 1))


class BaseStage(ABC):
    """
    Abstract base class for CLI stages
    """
    name = None
    help = None

    def __init__(self, args: argparse.Namespace):
        if not self.name:
            raise ValueError("Stage name must be provided.")

        self.args = args
        self.artifacts = []
        self.completed = False
        self.wall_time = 0.0

    @classmethod
    @abstractmethod
    def add_arguments(cls, parser: argparse.ArgumentParser):
        """
        Declare the sub-command flags.
        """
        pass

    @abstractmethod
    def run(self):
        """
        Run the stage.
        """
        pass

    def safe_run(self):
        """
        Wrapper around run() that marks produced artifacts as incomplete if an exception occurs
        """
        start = time.perf_counter()
        try:
            self.run()
            self.completed = True
        except Exception as e:
            self.log("error", f"Error during stage execution: {str(e)}")
            self.log("debug", traceback.format_exc())
            raise
        finally:
            self.wall_time = time.perf_counter() - start
            if not self.completed:
                self.mark_incomplete()

    def add_artifact(self, path):
        self.artifacts.append(str(path))
        return path

    def mark_incomplete(self):
        for path in self.artifacts:
            if os.path.exists(path):
                with open(f"{path}.incomplete", "w", encoding="utf-8") as fh:
                    fh.write(f"{self.name}\n")
                self.log("warning", f"Marked {path} as incomplete")

    @property
    def workers(self):
        return positive_workers(getattr(self.args, "workers", None))

    def log(self, log_level: str, message: str):
        """
        Log a message with the specified level.

        Args:
            log_level: The logging level (info, error, warning, debug, critical)
            message: The message to log
        """
        log_func = getattr(logger, log_level.lower(), logger.info)
        log_func(f"[{self.name}] {message}")
