"""
Shared fixtures: repository root on sys.path, seeded generators and small
curve/sample factories.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.analytics.funcdata import (  # noqa: E402
    Curve,
    LabeledSample,
    extract_measures,
    normalized_derivatives,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_curve(values, grid=None) -> Curve:
    values = np.asarray(values, dtype=float)
    if grid is None:
        grid = np.arange(values.shape[0], dtype=float) * 20.0
    return Curve(np.asarray(grid, dtype=float), values)


def make_sample(sid: str, values, label: int = 1, grid=None, m: int = 21) -> LabeledSample:
    """A preprocessed sample straight from (already standardized) values."""
    curve = make_curve(values, grid)
    return LabeledSample(
        id=sid,
        curve=curve,
        normalized=normalized_derivatives(curve, m),
        measures=extract_measures(curve),
        label=label,
    )


def random_samples(rng: np.random.Generator, n: int, n_points: int = 12, d: int = 2):
    """n random-walk samples with alternating labels."""
    return [
        make_sample(f"s{i:03d}", np.cumsum(rng.normal(size=(n_points, d)), axis=0), label=1 + i % 2)
        for i in range(n)
    ]


def two_cluster_matrix(n_per_class: int = 10, gap: float = 10.0, spread: float = 0.01):
    """Distances of two tight, well separated clusters; labels 1 then 2."""
    positions = np.concatenate([
        np.arange(n_per_class) * spread,
        gap + np.arange(n_per_class) * spread,
    ])
    entries = np.abs(positions[:, None] - positions[None, :])
    labels = np.array([1] * n_per_class + [2] * n_per_class)
    return entries, labels


@pytest.fixture
def sample_factory():
    return make_sample
