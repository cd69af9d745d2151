"""
Run Report
==========

Pydantic models for the JSON run report and the two CSV accuracy tables:
- weak learners (one row per learner: family, derivative order, tuned
  parameters, mean inner/outer accuracy, gate decision)
- ensembles (rows = gated learners in inclusion order, columns = RF-I,
  GB-I, RF-II, GB-II, LC; cells = mean inner accuracy of the selection
  step, marked `*` when the learner is kept in most outer folds; a last
  row with the mean outer accuracy)

Everything is serialized with sorted keys so identical runs give
identical bytes.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .cvharness import EnsembleResult, WeakResult

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
TABLE_COLUMNS = ["RF-I", "GB-I", "RF-II", "GB-II", "LC"]

Accuracy = Field(ge=0.0, le=1.0)


class WeakFoldReport(BaseModel):
    fold: int
    param: float
    inner_accuracy: float = Accuracy
    outer_accuracy: float = Accuracy
    brier: float
    fallbacks: int = 0


class WeakLearnerReport(BaseModel):
    name: str
    base: str
    semimetric: str
    family: str
    order: int
    kernel: Optional[str] = None
    folds: List[WeakFoldReport]
    mean_inner: float = Accuracy
    mean_outer: float = Accuracy
    mean_brier: float
    fallbacks: int = 0
    passed_gate: bool = False


class TrailStepReport(BaseModel):
    learner: str
    accuracy: float = Accuracy
    accepted: bool


class EnsembleFoldReport(BaseModel):
    fold: int
    learners: List[str]
    trail: List[TrailStepReport]
    inner_accuracy: float = Accuracy
    outer_accuracy: float = Accuracy
    brier: float
    params: Dict[str, float] = Field(default_factory=dict)
    weights: Optional[Dict[str, float]] = None
    oob_score: Optional[float] = None
    importance: Dict[str, float] = Field(default_factory=dict)


class EnsembleReport(BaseModel):
    name: str
    kind: str
    type: str
    folds: List[EnsembleFoldReport]
    skipped_folds: List[int] = Field(default_factory=list)
    mean_inner: float = Accuracy
    mean_outer: float = Accuracy
    mean_brier: float
    inclusion: Dict[str, int] = Field(default_factory=dict)


class BaseReport(BaseModel):
    """Weak learners and ensembles of one learner base (fkNN or kNCD)."""

    base: str
    gate: str
    threshold: float
    candidates: List[str]
    weak: List[WeakLearnerReport]
    ensembles: List[EnsembleReport] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


class RunReport(BaseModel):
    format_version: int = FORMAT_VERSION
    seed: int
    config_fingerprint: str
    dataset_fingerprint: str
    fold_plan_fingerprint: str
    n_samples: int
    classes: List[int]
    preprocessing: Dict[str, object] = Field(default_factory=dict)
    audit: Dict[str, object] = Field(default_factory=dict)
    bases: List[BaseReport] = Field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


# =============================================================================
# BUILDERS
# =============================================================================

def weak_report(result: WeakResult, gated: List[str]) -> WeakLearnerReport:
    spec = result.spec
    return WeakLearnerReport(
        name=result.name,
        base=spec.base.value,
        semimetric=spec.semimetric.label,
        family=spec.semimetric.family.value,
        order=spec.semimetric.order,
        kernel=spec.kernel.value if spec.base.value == "kNCD" else None,
        folds=[
            WeakFoldReport(
                fold=o,
                param=f.param,
                inner_accuracy=f.inner_accuracy,
                outer_accuracy=f.outer_accuracy,
                brier=f.brier,
                fallbacks=f.fallbacks,
            )
            for o, f in enumerate(result.folds)
        ],
        mean_inner=result.mean_inner,
        mean_outer=result.mean_outer,
        mean_brier=result.mean_brier,
        fallbacks=result.fallbacks,
        passed_gate=result.name in gated,
    )


def ensemble_report(result: EnsembleResult) -> EnsembleReport:
    folds, skipped = [], []
    inclusion: Dict[str, int] = {}
    for o, f in enumerate(result.folds):
        if f is None:
            skipped.append(o)
            continue
        model = f.model
        for name in model.learners:
            inclusion[name] = inclusion.get(name, 0) + 1
        folds.append(EnsembleFoldReport(
            fold=o,
            learners=list(model.learners),
            trail=[TrailStepReport(learner=s.learner, accuracy=s.accuracy, accepted=s.accepted) for s in model.trail],
            inner_accuracy=f.inner_accuracy,
            outer_accuracy=f.outer_accuracy,
            brier=f.brier,
            params={k: float(v) for k, v in model.params.items()},
            weights=(
                {n: float(w) for n, w in zip(model.learners, model.weights.omega)}
                if model.weights is not None else None
            ),
            oob_score=f.oob_score,
            importance=f.importance,
        ))
    return EnsembleReport(
        name=result.name,
        kind=result.kind.value,
        type=result.mtype.value,
        folds=folds,
        skipped_folds=skipped,
        mean_inner=result.mean_inner if folds else 0.0,
        mean_outer=result.mean_outer if folds else 0.0,
        mean_brier=result.mean_brier if folds else 0.0,
        inclusion=inclusion,
    )


# =============================================================================
# CSV TABLES
# =============================================================================

def weak_table(report: BaseReport) -> pd.DataFrame:
    rows = [
        {
            "learner": w.name,
            "family": w.family,
            "semimetric": w.semimetric,
            "a": w.order,
            "params": " ".join(f"{f.param:g}" for f in w.folds),
            "inner": round(w.mean_inner, 4),
            "outer": round(w.mean_outer, 4),
            "passed_gate": w.passed_gate,
        }
        for w in report.weak
    ]
    return pd.DataFrame(rows, columns=["learner", "family", "semimetric", "a", "params", "inner", "outer", "passed_gate"])


def ensemble_table(report: BaseReport) -> pd.DataFrame:
    """Table of selection-step inner accuracies per gated learner and ensemble."""
    by_name = {e.name: e for e in report.ensembles}
    frame = pd.DataFrame(index=pd.Index(report.candidates, name="learner"), columns=TABLE_COLUMNS, dtype=object)
    outer_row = {}
    for column in TABLE_COLUMNS:
        ensemble = by_name.get(column)
        if ensemble is None or not ensemble.folds:
            outer_row[column] = ""
            continue
        n_folds = len(ensemble.folds)
        for learner in report.candidates:
            steps = [s.accuracy for f in ensemble.folds for s in f.trail if s.learner == learner]
            if not steps:
                frame.loc[learner, column] = ""
                continue
            cell = f"{np.mean(steps):.4f}"
            if ensemble.inclusion.get(learner, 0) * 2 > n_folds:
                cell += "*"
            frame.loc[learner, column] = cell
        outer_row[column] = f"{ensemble.mean_outer:.4f}"
    frame.loc["outer"] = pd.Series(outer_row)
    frame = frame.fillna("")
    frame.index.name = "learner"
    return frame


def write_outputs(report: RunReport, output_dir: Path) -> List[Path]:
    """Write report.json and, per learner base, the two accuracy tables."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = [output_dir / "report.json"]
    written[0].write_text(report.to_json(), encoding="utf-8")
    for base in report.bases:
        weak_path = output_dir / f"weak_learners_{base.base}.csv"
        weak_table(base).to_csv(weak_path, index=False)
        table_path = output_dir / f"ensembles_{base.base}.csv"
        ensemble_table(base).to_csv(table_path)
        written.extend([weak_path, table_path])
    logger.info(f"Wrote {len(written)} report files to {output_dir}")
    return written
