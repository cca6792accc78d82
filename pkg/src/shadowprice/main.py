"""Command-line entry point: ``shadowprice run`` and ``shadowprice validate``."""

import argparse
import json
import sys
from typing import List, Optional

from . import parallel
from .cli.models import ExperimentConfig
from .cli.runner import EXIT_ERROR, EXIT_OK, EXIT_VALIDATION, run, validate
from .config import Config
from .errors import ConfigValidationError
from .logger import get_logger, setup_logger


class ShadowPriceApp:
    """Main application class wiring configuration, logging and the experiment runner."""

    def __init__(self, config: Config = None):
        """Initialize the application.

        Args:
            config: Configuration instance. If None, creates a new one.
        """
        self.config = config or Config()

        problems = self.config.validate()
        if problems:
            raise ConfigValidationError(problems)

        self.logger = setup_logger(
            level=self.config.log_level,
            log_file=self.config.log_file,
            json_format=self.config.log_json,
        )
        parallel.configure(self.config.threads, self.config.chunk_size)
        self.logger.debug(
            "Application configured",
            extra={"extra_fields": {"threads": self.config.threads, "chunk_size": self.config.chunk_size}},
        )

    def run_file(self, path: str, seed: Optional[int] = None, out_dir: Optional[str] = None) -> int:
        """Run the experiment file at ``path``; returns the process exit code."""
        try:
            experiment = ExperimentConfig.from_file(path)
        except ConfigValidationError as exc:
            _print_error(exc.to_dict())
            return EXIT_VALIDATION
        result = run(experiment, seed=seed, out_dir=out_dir, settings=self.config)
        if result.error is not None:
            _print_error(result.error)
        else:
            print(json.dumps({"status": "ok", "artifacts": [str(p) for p in result.artifacts]}))
        return result.exit_code

    def validate_file(self, path: str) -> int:
        """Print the violation report of the experiment file at ``path``."""
        try:
            violations = validate(ExperimentConfig.from_file(path))
        except ConfigValidationError as exc:
            violations = exc.violations
        print(json.dumps({"valid": not violations, "violations": violations}, ensure_ascii=False))
        return EXIT_OK if not violations else EXIT_VALIDATION


def _print_error(document: dict) -> None:
    print(json.dumps(document, ensure_ascii=False, default=str), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shadowprice", description="Diverse-market and consistent-price-system experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", help="run an experiment file and write its artifacts")
    run_cmd.add_argument("--config", required=True, help="INI experiment file")
    run_cmd.add_argument("--seed", type=int, default=None, help="root seed (overrides the file)")
    run_cmd.add_argument("--out", default=None, help="output directory (overrides the file)")

    validate_cmd = commands.add_parser("validate", help="check an experiment file without simulating")
    validate_cmd.add_argument("--config", required=True, help="INI experiment file")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the application."""
    args = build_parser().parse_args(argv)
    try:
        app = ShadowPriceApp()
    except ConfigValidationError as exc:
        _print_error(exc.to_dict())
        return EXIT_VALIDATION
    try:
        if args.command == "run":
            return app.run_file(args.config, args.seed, args.out)
        return app.validate_file(args.config)
    except Exception as exc:
        get_logger(__name__).exception("Unexpected error")
        _print_error({"code": "UNEXPECTED", "message": str(exc)})
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
