"""
Report Tests
============

Tests for report models, the accuracy tables and the output files.
"""

import json

import numpy as np
import pandas as pd
import pytest

from src.analytics.cvharness import EnsembleFold, EnsembleResult, WeakFold, WeakResult
from src.analytics.ensemble import EnsembleModel, LCEWeights, MeasureType, SuperKind, TrailStep
from src.analytics.report import (
    TABLE_COLUMNS,
    BaseReport,
    RunReport,
    WeakLearnerReport,
    ensemble_report,
    ensemble_table,
    weak_report,
    weak_table,
    write_outputs,
)
from src.analytics.semimetrics import SemiMetricSpec
from src.analytics.weak_learners import Kernel, LearnerBase, WeakLearnerSpec

L2 = "kNCD:L2[a=0]"
DTW = "kNCD:dtw[a=0]"
L1 = "kNCD:L1[a=0]"


def weak_result(name: str, outer) -> WeakResult:
    folds = [
        WeakFold(param=0.25, inner_accuracy=o, outer_accuracy=o, brier=0.2, rows=np.zeros(0, dtype=int),
                 oof_probs=np.zeros((0, 2)), test_rows=np.zeros(0, dtype=int), test_probs=np.zeros((0, 2)),
                 fallbacks=1)
        for o in outer
    ]
    spec = WeakLearnerSpec(LearnerBase.KNCD, SemiMetricSpec.from_name(name), kernel=Kernel.UNIFORM)
    return WeakResult(spec=spec, folds=folds)


@pytest.fixture
def forest_result():
    trail = [TrailStep(L2, 0.9, True), TrailStep(DTW, 0.9, True), TrailStep(L1, 0.85, False)]
    model = EnsembleModel(SuperKind.RF, MeasureType.I, [L2, DTW], (1, 2),
                          params={"n_trees": 10, "mtry": 1}, trail=trail)
    fold = EnsembleFold(model=model, inner_accuracy=0.9, outer_accuracy=0.8, brier=0.1,
                        importance={L2: 0.2, DTW: 0.05}, oob_score=0.85)
    return EnsembleResult(kind=SuperKind.RF, mtype=MeasureType.I, folds=[fold, None])


@pytest.fixture
def lc_result():
    trail = [TrailStep(L2, 0.7, True), TrailStep(DTW, 0.75, True)]
    model = EnsembleModel(SuperKind.LC, MeasureType.I, [L2, DTW], (1, 2),
                          weights=LCEWeights(np.array([0.25, 0.75])), trail=trail)
    folds = [EnsembleFold(model=model, inner_accuracy=0.75, outer_accuracy=o, brier=0.2) for o in (0.6, 0.8)]
    return EnsembleResult(kind=SuperKind.LC, mtype=MeasureType.I, folds=folds)


@pytest.fixture
def base_report(forest_result, lc_result):
    weak = [weak_result("L2", [0.9, 0.8]), weak_result("dtw", [0.7, 0.7]), weak_result("L1", [0.6, 0.6]),
            weak_result("dcor", [0.5, 0.5])]
    candidates = [L2, DTW, L1]
    return BaseReport(
        base="kNCD",
        gate="outer",
        threshold=0.55,
        candidates=candidates,
        weak=[weak_report(w, candidates) for w in weak],
        ensembles=[ensemble_report(forest_result), ensemble_report(lc_result)],
    )


def run_report(base: BaseReport) -> RunReport:
    return RunReport(
        seed=42,
        config_fingerprint="c" * 64,
        dataset_fingerprint="d" * 64,
        fold_plan_fingerprint="f" * 64,
        n_samples=20,
        classes=[1, 2],
        preprocessing={"n_dropped": 0},
        bases=[base],
    )


class TestBuilders:
    """Test report construction from harness results."""

    def test_weak_report(self, base_report):
        first = base_report.weak[0]
        assert first.name == L2
        assert first.family == "lock-step"
        assert first.kernel == "uniform"
        assert first.mean_outer == pytest.approx(0.85)
        assert first.fallbacks == 2
        assert first.passed_gate
        assert not base_report.weak[3].passed_gate

    def test_ensemble_report_skips_empty_folds(self, forest_result):
        report = ensemble_report(forest_result)
        assert report.name == "RF-I"
        assert report.skipped_folds == [1]
        assert [f.fold for f in report.folds] == [0]
        assert report.mean_outer == pytest.approx(0.8)
        assert report.inclusion == {L2: 1, DTW: 1}
        assert report.folds[0].params == {"n_trees": 10.0, "mtry": 1.0}
        assert report.folds[0].weights is None
        assert report.folds[0].oob_score == 0.85

    def test_lc_weights_reported(self, lc_result):
        report = ensemble_report(lc_result)
        assert report.folds[0].weights == {L2: 0.25, DTW: 0.75}
        assert report.mean_outer == pytest.approx(0.7)

    def test_all_folds_skipped(self):
        report = ensemble_report(EnsembleResult(SuperKind.GB, MeasureType.II, folds=[None, None]))
        assert report.folds == []
        assert report.mean_outer == 0.0
        assert report.skipped_folds == [0, 1]


class TestTables:
    """Test the CSV accuracy tables."""

    def test_weak_table(self, base_report):
        table = weak_table(base_report)
        assert list(table["learner"]) == [L2, DTW, L1, "kNCD:dcor[a=0]"]
        assert table.loc[0, "params"] == "0.25 0.25"
        assert table.loc[0, "outer"] == 0.85
        assert list(table["passed_gate"]) == [True, True, True, False]

    def test_ensemble_table(self, base_report):
        table = ensemble_table(base_report)
        assert list(table.columns) == TABLE_COLUMNS
        assert list(table.index) == [L2, DTW, L1, "outer"]
        assert table.loc[L2, "RF-I"] == "0.9000*"
        assert table.loc[L1, "RF-I"] == "0.8500"
        assert table.loc[DTW, "LC"] == "0.7500*"
        assert table.loc[L1, "LC"] == ""
        assert table.loc["outer", "RF-I"] == "0.8000"
        assert table.loc["outer", "LC"] == "0.7000"
        assert table.loc["outer", "GB-II"] == ""

    def test_no_candidates(self):
        empty = BaseReport(base="fkNN", gate="outer", threshold=0.55, candidates=[], weak=[])
        table = ensemble_table(empty)
        assert list(table.index) == ["outer"]


class TestOutputs:
    """Test report serialization and files."""

    def test_json_is_stable(self, base_report):
        report = run_report(base_report)
        assert report.to_json() == run_report(base_report).to_json()
        parsed = json.loads(report.to_json())
        assert parsed["format_version"] == 1
        assert parsed["bases"][0]["ensembles"][0]["name"] == "RF-I"

    def test_accuracies_are_bounded(self, base_report):
        with pytest.raises(ValueError):
            WeakLearnerReport.model_validate({**base_report.weak[0].model_dump(), "mean_outer": 1.5})

    def test_write_outputs(self, tmp_path, base_report):
        written = write_outputs(run_report(base_report), tmp_path / "out")
        names = sorted(p.name for p in written)
        assert names == ["ensembles_kNCD.csv", "report.json", "weak_learners_kNCD.csv"]
        weak = pd.read_csv(tmp_path / "out" / "weak_learners_kNCD.csv")
        assert len(weak) == 4
        ensembles = pd.read_csv(tmp_path / "out" / "ensembles_kNCD.csv", index_col=0, dtype=str,
                                keep_default_na=False)
        assert ensembles.loc["outer", "RF-I"] == "0.8000"
