"""
Synthetic Scenario Generator
============================

Writes labeled mouse trajectories in the input CSV formats for three
scenarios with a known answer:
- amplitude: two classes of the same arc differing in peak height
  (1 vs 2, Gaussian noise sd 0.1)
- timewarp: same arc and random monotone time warps in both classes;
  class 2 moves forward, doubles back and moves forward again
- xor: class = (high peak) XOR (forward-back-forward revisit); height
  shows in the y extremes, the revisit in the x velocity and x flips
  (x carries no noise here), so learners that see one attribute stay at
  chance while both together separate the classes

Trajectories are rounded to whole pixels in a 1280x720 viewport. Output
depends only on (scenario, n, seed).
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from .dataset import LABEL_COLUMNS, TRAJECTORY_COLUMNS
from .errors import InvalidInputError, UsageError
from .seeding import derive_rng

logger = logging.getLogger(__name__)

SCENARIOS = ("amplitude", "timewarp", "xor")
QUESTION = "q1"


@dataclass
class ScenarioConfig:
    """Generator settings for one scenario."""

    scenario: str
    n: int = 200
    seed: int = 42
    min_points: int = 50
    max_points: int = 80
    min_duration_ms: float = 1500.0
    max_duration_ms: float = 3000.0
    viewport: Tuple[int, int] = (1280, 720)
    origin: Tuple[float, float] = (200.0, 200.0)
    scale: Tuple[float, float] = (600.0, 150.0)
    noise: float = 0.1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise UsageError(f"Unknown scenario '{self.scenario}'; choose from {', '.join(SCENARIOS)}")
        if self.n < 0:
            raise InvalidInputError(f"n must be >= 0, got {self.n}")
        if self.min_points < 5 or self.max_points < self.min_points:
            raise InvalidInputError(f"Invalid point range {self.min_points}..{self.max_points}")


DEFAULT_NOISE = {"amplitude": 0.1, "timewarp": 0.01, "xor": 0.02}


def scenario_config(scenario: str, n: int = 200, seed: int = 42) -> ScenarioConfig:
    """Settings with the scenario's default noise level."""
    if scenario not in SCENARIOS:
        raise UsageError(f"Unknown scenario '{scenario}'; choose from {', '.join(SCENARIOS)}")
    return ScenarioConfig(scenario=scenario, n=n, seed=seed, noise=DEFAULT_NOISE[scenario])


# =============================================================================
# CURVE SHAPES
# =============================================================================

def _time_warp(rng: np.random.Generator, n_points: int) -> np.ndarray:
    """Monotone warp s -> s**gamma of the unit interval."""
    s = np.linspace(0.0, 1.0, n_points)
    return s ** np.exp(rng.uniform(-0.3, 0.3))


def _revisit_path(rng: np.random.Generator, progress: np.ndarray) -> np.ndarray:
    """Position along the arc for a forward, back, forward movement."""
    turn, back = rng.uniform(0.65, 0.75), rng.uniform(0.2, 0.3)
    travel = [0.0, turn, 2 * turn - back, 2 * turn - back + (1.0 - back)]
    return np.interp(progress * travel[-1], travel, [0.0, turn, back, 1.0])


def _arc(position: np.ndarray, height: float) -> np.ndarray:
    return np.column_stack([position, height * np.sin(np.pi * position)])


def _to_pixels(config: ScenarioConfig, latent: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(config.origin) + latent * np.asarray(config.scale))


def _sample(config: ScenarioConfig, rng: np.random.Generator, index: int) -> Tuple[np.ndarray, np.ndarray, int]:
    """(t_ms, pixel values, label) of one trajectory."""
    n_points = int(rng.integers(config.min_points, config.max_points + 1))
    duration = rng.uniform(config.min_duration_ms, config.max_duration_ms)
    progress = _time_warp(rng, n_points)
    times = np.linspace(0.0, 1.0, n_points) * duration

    if config.scenario == "amplitude":
        label = 1 + index % 2
        latent = _arc(progress, float(label))
    elif config.scenario == "timewarp":
        label = 1 + index % 2
        position = _revisit_path(rng, progress) if label == 2 else progress
        latent = _arc(position, 1.0)
    else:
        high, revisit = index % 2, (index // 2) % 2
        label = 1 + (high ^ revisit)
        position = _revisit_path(rng, progress) if revisit else progress
        latent = _arc(position, 2.0 if high else 1.0)

    noise = rng.normal(0.0, config.noise, size=latent.shape)
    if config.scenario == "xor":
        # x direction changes come from the movement alone
        noise[:, 0] = 0.0
    latent = latent + noise
    latent[0] = _arc(np.zeros(1), 1.0)[0]
    return np.round(times), _to_pixels(config, latent), label


# =============================================================================
# GENERATION
# =============================================================================

def generate(config: ScenarioConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Trajectory and label tables for a scenario."""
    rng = derive_rng(config.seed, f"synth/{config.scenario}")
    rows, labels = [], []
    width, height = config.viewport
    for i in range(config.n):
        sid = f"s{i + 1:04d}"
        times, pixels, label = _sample(config, rng, i)
        for t, (x, y) in zip(times, pixels):
            rows.append((sid, QUESTION, int(t), int(x), int(y), width, height))
        labels.append((sid, QUESTION, label))

    trajectories = pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)
    label_table = pd.DataFrame(labels, columns=LABEL_COLUMNS)
    logger.info(f"Generated {config.n} '{config.scenario}' trajectories ({len(rows)} points)")
    return trajectories, label_table


def write_scenario(config: ScenarioConfig, output_dir: Path) -> Dict[str, Path]:
    """Write trajectories.csv and labels.csv; n = 0 gives header-only files."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    trajectories, labels = generate(config)
    paths = {
        "trajectories": output_dir / "trajectories.csv",
        "labels": output_dir / "labels.csv",
    }
    trajectories.to_csv(paths["trajectories"], index=False, lineterminator="\n")
    labels.to_csv(paths["labels"], index=False, lineterminator="\n")
    logger.info(f"Scenario files written to {output_dir}")
    return paths
