#!/usr/bin/env python
import argparse
import sys

from pydantic import ValidationError

from src.base import EXIT_OK, EXIT_USAGE, ConfigError, StageError, StageRegistry
# Import all stages to ensure registration
from src.stages import *
from src.utils.logger_config import logger


def build_parser():
    parser = argparse.ArgumentParser(description='Audio-visual correspondence curation engine')
    subparsers = parser.add_subparsers(dest='stage', required=True, metavar='STAGE')

    for name in StageRegistry.available_stages():
        stage_class = StageRegistry.get_stage(name)
        sub = subparsers.add_parser(name, help=stage_class.help, description=stage_class.help)
        sub.add_argument('--workers', '-w', type=int, default=None,
                         help='Worker threads (default 1; ACAV_WORKERS overrides)')
        sub.add_argument('--seed', type=int, default=0, help='Global seed; every stage derives its own from it')
        stage_class.add_arguments(sub)

    return parser


def run_stage(args):
    stage_class = StageRegistry.get_stage(args.stage)
    stage = stage_class(args)
    logger.info(f"Starting stage: {args.stage}")
    try:
        stage.safe_run()
    except (ConfigError, ValidationError) as e:
        logger.error(f"Invalid configuration for {args.stage}: {e}")
        return EXIT_USAGE
    except StageError as e:
        logger.error(f"Pipeline stopped in stage {e.stage}: {e.cause}")
        return StageRegistry.exit_code(e.stage)
    except Exception as e:
        logger.error(f"Error in stage {args.stage}: {e}")
        return StageRegistry.exit_code(args.stage)

    logger.info(f"Completed stage {args.stage} in {stage.wall_time:.2f}s")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return run_stage(args)


if __name__ == "__main__":
    sys.exit(main())
