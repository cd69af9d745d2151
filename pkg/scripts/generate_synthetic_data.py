#!/usr/bin/env python3
"""
Synthetic Trajectory Data Generator
===================================

Writes trajectories.csv and labels.csv for one of the synthetic scenarios
(amplitude, timewarp, xor) so the full pipeline can be exercised without
survey data.

Usage:
    python scripts/generate_synthetic_data.py amplitude -n 200 --seed 42 --output data/
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.analytics.synthetic import SCENARIOS, scenario_config, write_scenario  # noqa: E402

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def main():
    parser = argparse.ArgumentParser(
        description="Generate synthetic mouse trajectories with known class structure"
    )

    parser.add_argument(
        "scenario",
        choices=SCENARIOS,
        help="Scenario to generate"
    )

    parser.add_argument(
        "-n",
        type=int,
        default=200,
        help="Number of trajectories (default: 200)"
    )

    parser.add_argument(
        "--seed", "-s",
        type=int,
        default=42,
        help="Random seed (default: 42)"
    )

    parser.add_argument(
        "--output", "-o",
        type=str,
        default="data",
        help="Output directory (default: data/)"
    )

    args = parser.parse_args()

    paths = write_scenario(scenario_config(args.scenario, n=args.n, seed=args.seed), Path(args.output))
    for kind, path in paths.items():
        logger.info(f"  {kind}: {path}")


if __name__ == "__main__":
    main()
