"""
Run Configuration
=================

Pydantic models for the single JSON document that drives a run. Defaults
follow the evaluation protocol: 101-point grids, 10 outer / 5 inner folds,
a 0.55 gate on outer accuracy and a Gaussian kNCD kernel.

The seed is required. jobs, output_dir and cache_dir never change results
and are left out of the configuration fingerprint.
"""

import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .cvharness import ENSEMBLE_KINDS, EnsembleSetup
from .ensemble import MeasureType, SuperKind, SuperLearnerGrid
from .errors import ConfigError, InvalidInputError
from .funcdata import MEASURE_NAMES
from .semimetrics import SemiMetricFamily, SemiMetricSpec
from .weak_learners import Kernel, LearnerBase

RUNTIME_FIELDS = {"jobs", "output_dir", "cache_dir"}


class GateMode(str, Enum):
    OUTER = "outer"
    INNER = "inner"


class Standardization(str, Enum):
    VIEWPORT = "viewport"
    MINMAX = "minmax"


class DataPaths(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trajectories: str = "data/trajectories.csv"
    labels: str = "data/labels.csv"
    aois: Optional[str] = None
    measures: Optional[str] = None


class PreprocessSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid_size: int = Field(101, ge=2)
    hover_threshold_ms: float = Field(1000.0, ge=0)
    flip_threshold: float = Field(0.0, ge=0)
    standardization: Standardization = Standardization.VIEWPORT
    max_response_time_ms: Optional[float] = Field(420000.0, gt=0)
    min_points: int = Field(5, ge=5)
    normalize_before_derivative: bool = False


class SemiMetricEntry(BaseModel):
    """One roster line: a semi-metric name and the derivative orders to use it on."""

    model_config = ConfigDict(extra="forbid")

    name: str
    orders: List[int] = Field(default_factory=lambda: [0], min_length=1)
    collapse_repeats: bool = False

    @model_validator(mode="after")
    def _parse(self) -> "SemiMetricEntry":
        try:
            self.specs()
        except InvalidInputError as e:
            raise ValueError(str(e)) from e
        return self

    def specs(self) -> List[SemiMetricSpec]:
        return [SemiMetricSpec.from_name(self.name, a, self.collapse_repeats) for a in self.orders]


def _entry(name: str, orders: Tuple[int, ...] = (0,)) -> SemiMetricEntry:
    return SemiMetricEntry(name=name, orders=list(orders))


def default_roster() -> List[SemiMetricEntry]:
    """Curve and measure semi-metrics that need no AOI partition."""
    all_orders = (0, 1, 2)
    return [
        _entry("L1", all_orders),
        _entry("L2", all_orders),
        _entry("dcor", all_orders),
        _entry("dtw"),
        _entry("frechet"),
        _entry("hausdorff"),
        _entry("mean", all_orders),
        _entry("globMax", all_orders),
        _entry("globMax-x"),
        _entry("globMax-y"),
        _entry("globMin", all_orders),
        _entry("globMin-x"),
        _entry("globMin-y"),
        _entry("globRange", all_orders),
        _entry("measure:RT"),
        _entry("measure:initiation"),
        _entry("measure:distance"),
        _entry("measure:velocity"),
        _entry("measure:acceleration"),
        _entry("measure:hovers"),
        _entry("measure:hover_time"),
        _entry("measure:x_flips"),
        _entry("measure:y_flips"),
        _entry("measure:flips2d"),
        _entry("measure:length"),
    ]


class WeakLearnerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    bases: List[LearnerBase] = Field(default_factory=lambda: [LearnerBase.KNCD], min_length=1)
    kernel: Kernel = Kernel.GAUSSIAN
    k_grid: Optional[List[int]] = None
    h_grid: Optional[List[float]] = None

    @field_validator("k_grid")
    @classmethod
    def _positive_k(cls, v):
        if v is not None and (not v or any(k < 1 for k in v)):
            raise ValueError("k_grid must be a nonempty list of positive integers")
        return v

    @field_validator("h_grid")
    @classmethod
    def _positive_h(cls, v):
        if v is not None and (not v or any(h <= 0 for h in v)):
            raise ValueError("h_grid must be a nonempty list of positive bandwidths")
        return v

    def grids(self) -> Dict[LearnerBase, List[float]]:
        out: Dict[LearnerBase, List[float]] = {}
        if self.k_grid is not None:
            out[LearnerBase.FKNN] = list(self.k_grid)
        if self.h_grid is not None:
            out[LearnerBase.KNCD] = list(self.h_grid)
        return out


_KIND_NAMES = {f"{k.value}-{t.value}" if k != SuperKind.LC else k.value: (k, t) for k, t in ENSEMBLE_KINDS}


class EnsembleSettings(BaseModel):
    """
    Ensemble kinds, the selection gate and the super-learner grids.

    covariate_measures are the measures a type II super-learner sees next to
    the weak-learner probabilities. The default is the ten trajectory
    measures; personalized measures from measures.csv are used only when
    listed here by name.
    """

    model_config = ConfigDict(extra="forbid")

    kinds: List[str] = Field(default_factory=lambda: list(_KIND_NAMES), min_length=1)
    gate: GateMode = GateMode.OUTER
    threshold: float = Field(0.55, ge=0, le=1)
    super_cv_folds: Optional[int] = Field(10, ge=2)
    rf_n_trees: List[int] = Field(default_factory=lambda: [100, 300, 500], min_length=1)
    rf_mtry: List[str] = Field(default_factory=lambda: ["sqrt", "third", "all"], min_length=1)
    rf_min_leaf: int = Field(5, ge=1)
    gb_n_trees: List[int] = Field(default_factory=lambda: [50, 100, 200], min_length=1)
    gb_shrinkage: List[float] = Field(default_factory=lambda: [0.01, 0.1], min_length=1)
    gb_depth: List[int] = Field(default_factory=lambda: [1, 2, 3], min_length=1)
    gb_min_leaf: int = Field(5, ge=1)
    gb_subsample: float = Field(1.0, gt=0, le=1)
    covariate_measures: List[str] = Field(default_factory=lambda: list(MEASURE_NAMES))
    importance_repeats: int = Field(5, ge=1)
    save_models: bool = False

    @field_validator("kinds")
    @classmethod
    def _known_kinds(cls, v):
        unknown = [k for k in v if k not in _KIND_NAMES]
        if unknown:
            raise ValueError(f"Unknown ensemble kinds {unknown}; choose from {sorted(_KIND_NAMES)}")
        return v

    @field_validator("rf_mtry")
    @classmethod
    def _mtry_rules(cls, v):
        bad = [r for r in v if r not in ("sqrt", "third", "all") and not r.isdigit()]
        if bad:
            raise ValueError(f"mtry rules must be sqrt, third, all or an integer, got {bad}")
        return v

    def setup(self, gate: Optional[str] = None) -> EnsembleSetup:
        grid = SuperLearnerGrid(
            rf_n_trees=tuple(self.rf_n_trees),
            rf_mtry=tuple(self.rf_mtry),
            rf_min_leaf=self.rf_min_leaf,
            gb_n_trees=tuple(self.gb_n_trees),
            gb_shrinkage=tuple(self.gb_shrinkage),
            gb_depth=tuple(self.gb_depth),
            gb_min_leaf=self.gb_min_leaf,
            gb_subsample=self.gb_subsample,
        )
        kinds: Tuple[Tuple[SuperKind, MeasureType], ...] = tuple(_KIND_NAMES[k] for k in self.kinds)
        return EnsembleSetup(
            grid=grid,
            gate=gate or self.gate.value,
            threshold=self.threshold,
            super_cv_folds=self.super_cv_folds,
            kinds=kinds,
            importance_repeats=self.importance_repeats,
        )


class FoldSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k_out: int = Field(10, ge=2)
    k_in: int = Field(5, ge=2)


class RunConfig(BaseModel):
    """Complete description of one run."""

    model_config = ConfigDict(extra="forbid")

    seed: int
    data: DataPaths = Field(default_factory=DataPaths)
    question: Optional[str] = None
    preprocess: PreprocessSettings = Field(default_factory=PreprocessSettings)
    semimetrics: List[SemiMetricEntry] = Field(default_factory=default_roster, min_length=1)
    weak: WeakLearnerSettings = Field(default_factory=WeakLearnerSettings)
    ensemble: EnsembleSettings = Field(default_factory=EnsembleSettings)
    folds: FoldSettings = Field(default_factory=FoldSettings)
    jobs: int = Field(1, ge=1)
    output_dir: str = "output"
    cache_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check_roster(self) -> "RunConfig":
        labels = [spec.label for spec in self.roster()]
        duplicates = sorted({l for l in labels if labels.count(l) > 1})
        if duplicates:
            raise ValueError(f"Semi-metrics listed twice: {duplicates}")
        needs_aois = [
            spec.label for spec in self.roster()
            if spec.family in (SemiMetricFamily.COMPOSITION, SemiMetricFamily.SYMBOL_SEQUENCE)
        ]
        if needs_aois and self.data.aois is None:
            raise ValueError(f"{needs_aois} need an AOI partition (data.aois)")
        return self

    def roster(self) -> List[SemiMetricSpec]:
        return [spec for entry in self.semimetrics for spec in entry.specs()]

    def fingerprint(self) -> str:
        document = self.model_dump(mode="json", exclude=RUNTIME_FIELDS)
        canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2) + "\n"

    @property
    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"


def default_config(seed: int = 42) -> RunConfig:
    return RunConfig(seed=seed)


def parse_config(document: str) -> RunConfig:
    """Parse a JSON config; every failure becomes a ConfigError."""
    try:
        return RunConfig.model_validate_json(document)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_config(path: str) -> RunConfig:
    try:
        document = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {path}: {e}") from e
    return parse_config(document)
