"""
Command-Line Interface
======================

Sub-commands:
    preprocess   load and preprocess the trajectories, write preprocessed.json
    distances    compute (or reuse) the cached distance matrices
    run          the full protocol: weak learners, gate, ensembles, report
    synth        write a synthetic scenario (amplitude, timewarp, xor)
    config       print the effective configuration, or the defaults with --init

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 internal
invariant violation, 5 usage error.

Usage:
    python -m src.cli.main config --init > run.json
    python -m src.cli.main run --config run.json --jobs 4 --out output/
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from ..analytics.config import GateMode, RunConfig, default_config, load_config
from ..analytics.engine import ClassificationEngine
from ..analytics.errors import ConfigError, FDClassError, UsageError, exit_code_for
from ..analytics.synthetic import SCENARIOS, scenario_config, write_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0


class CLIParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with the usage exit code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser() -> CLIParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=str, default=None, help="Run configuration JSON")
    common.add_argument("--seed", "-s", type=int, default=None, help="Override the master seed")
    common.add_argument("--jobs", "-j", type=int, default=None, help="Worker count (never changes results)")
    common.add_argument("--out", "-o", type=str, default=None, help="Output directory")
    common.add_argument(
        "--gate",
        choices=[g.value for g in GateMode],
        default=None,
        help="Gate weak learners on outer (default) or inner accuracy",
    )
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    parser = CLIParser(description="Functional ensemble classification of mouse trajectories")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CLIParser)

    commands.add_parser("preprocess", parents=[common], help="Preprocess trajectories")
    distances = commands.add_parser("distances", parents=[common], help="Compute distance matrices")
    distances.add_argument("--csv", action="store_true", help="Also export every matrix as CSV")
    commands.add_parser("run", parents=[common], help="Run the full protocol")

    synth = commands.add_parser("synth", parents=[common], help="Generate a synthetic scenario")
    synth.add_argument("scenario", help=f"One of: {', '.join(SCENARIOS)}")
    synth.add_argument("-n", type=int, default=200, help="Number of trajectories (default: 200)")

    config = commands.add_parser("config", parents=[common], help="Show or initialise the configuration")
    config.add_argument("--init", action="store_true", help="Print the default configuration")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Load --config (or the defaults) and apply the command-line overrides."""
    config = load_config(args.config) if args.config else default_config()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    if args.out is not None:
        updates["output_dir"] = args.out
    if args.gate is not None:
        updates["ensemble"] = {**config.ensemble.model_dump(mode="json"), "gate": args.gate}
    if not updates:
        return config
    try:
        return RunConfig.model_validate({**config.model_dump(mode="json"), **updates})
    except ValidationError as e:
        raise ConfigError(f"Invalid command-line override: {e}") from e


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_preprocess(config: RunConfig) -> Path:
    engine = ClassificationEngine(config)
    engine.preprocess()
    return engine.save_dataset()


def cmd_distances(config: RunConfig, export_csv: bool = False) -> List[Path]:
    engine = ClassificationEngine(config)
    engine.preprocess()
    export_dir = Path(config.output_dir) / "distances" if export_csv else None
    engine.compute_distances(export_dir=export_dir)
    return [engine.cache.path_for(spec) for spec in config.roster()]


def cmd_run(config: RunConfig):
    return ClassificationEngine(config).run()


def cmd_synth(scenario: str, n: int, seed: int, output_dir: str):
    return write_scenario(scenario_config(scenario, n=n, seed=seed), Path(output_dir))


def cmd_config(config: RunConfig, init: bool = False) -> str:
    return (default_config() if init else config).to_json()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s'
    )

    try:
        if args.command == "synth":
            seed = args.seed if args.seed is not None else default_config().seed
            cmd_synth(args.scenario, args.n, seed, args.out or "data")
        elif args.command == "config":
            config = default_config() if args.init else resolve_config(args)
            sys.stdout.write(cmd_config(config, init=args.init))
        else:
            config = resolve_config(args)
            if args.command == "preprocess":
                cmd_preprocess(config)
            elif args.command == "distances":
                cmd_distances(config, export_csv=args.csv)
            else:
                cmd_run(config)
    except FDClassError as e:
        logger.error(str(e))
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return exit_code_for(e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
