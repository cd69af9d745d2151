"""
Cross-Validation Harness Tests
==============================

Tests for fold plans, the protocol audit, weak-learner evaluation, the
selection gate and ensemble evaluation.
"""

import numpy as np
import pytest

from conftest import two_cluster_matrix
from src.analytics.cvharness import (
    EnsembleSetup,
    ProtocolAudit,
    WeakFold,
    WeakResult,
    accuracy,
    evaluate_ensembles,
    evaluate_weak,
    inner_splits,
    make_folds,
    select_gate,
    select_gate_inner,
    split_ids,
)
from src.analytics.ensemble import MeasureType, SuperKind, SuperLearnerGrid
from src.analytics.errors import InvalidInputError, InvariantViolation
from src.analytics.semimetrics import DistanceMatrix, SemiMetricSpec
from src.analytics.weak_learners import LearnerBase, WeakLearnerSpec

IDS = [f"s{i:02d}" for i in range(40)]
LABELS = [1 + i % 2 for i in range(40)]
SMALL_GRID = SuperLearnerGrid(rf_n_trees=(10,), rf_mtry=("all",), rf_min_leaf=1)


def fake_result(name: str, outer, inner=None) -> WeakResult:
    """A WeakResult carrying only accuracies."""
    semimetric = SemiMetricSpec.from_name(name)
    inner = inner if inner is not None else outer
    folds = [
        WeakFold(param=1, inner_accuracy=i, outer_accuracy=o, brier=0.0, rows=np.zeros(0, dtype=int),
                 oof_probs=np.zeros((0, 2)), test_rows=np.zeros(0, dtype=int), test_probs=np.zeros((0, 2)))
        for o, i in zip(outer, inner)
    ]
    return WeakResult(spec=WeakLearnerSpec(LearnerBase.FKNN, semimetric), folds=folds)


@pytest.fixture
def plan():
    return make_folds(IDS, LABELS, k_out=4, k_in=3, seed=11)


@pytest.fixture
def matrices(rng):
    """A separating L2 matrix and an uninformative measure matrix, rows in IDS order."""
    entries, _ = two_cluster_matrix(n_per_class=20)
    # Interleave the clusters so row i carries LABELS[i]
    interleaved = np.empty(40, dtype=int)
    interleaved[0::2] = np.arange(20)
    interleaved[1::2] = np.arange(20, 40)
    good = entries[np.ix_(interleaved, interleaved)]

    points = rng.normal(size=(40, 1))
    noise = np.abs(points - points.T)
    l2 = SemiMetricSpec.from_name("L2")
    measure = SemiMetricSpec.from_name("measure:distance")
    return {
        l2.label: DistanceMatrix(l2, IDS, IDS, good),
        measure.label: DistanceMatrix(measure, IDS, IDS, noise),
    }


@pytest.fixture
def specs():
    return [
        WeakLearnerSpec(LearnerBase.FKNN, SemiMetricSpec.from_name("L2")),
        WeakLearnerSpec(LearnerBase.FKNN, SemiMetricSpec.from_name("measure:distance")),
    ]


GRIDS = {LearnerBase.FKNN: [1, 3]}


class TestFoldPlan:
    """Test stratified nested folds."""

    def test_outer_folds_partition_ids(self, plan):
        flat = [sid for fold in plan.outer for sid in fold]
        assert sorted(flat) == sorted(IDS)
        assert len(set(flat)) == len(IDS)

    def test_outer_folds_are_stratified(self, plan):
        label_of = dict(zip(IDS, LABELS))
        for fold in plan.outer:
            counts = [sum(label_of[s] == c for s in fold) for c in (1, 2)]
            assert counts == [5, 5]

    def test_inner_folds_partition_outer_training(self, plan):
        for o in range(plan.k_out):
            flat = sorted(sid for fold in plan.inner[o] for sid in fold)
            assert flat == sorted(plan.outer_train(o))
            assert not set(flat) & set(plan.outer[o])

    def test_folds_keep_input_order(self, plan):
        position = {sid: i for i, sid in enumerate(IDS)}
        for fold in plan.outer:
            assert fold == sorted(fold, key=position.__getitem__)

    def test_seeded(self, plan):
        assert make_folds(IDS, LABELS, 4, 3, seed=11).fingerprint() == plan.fingerprint()
        assert make_folds(IDS, LABELS, 4, 3, seed=12).fingerprint() != plan.fingerprint()

    def test_small_class_rejected(self):
        with pytest.raises(InvalidInputError, match="class 2"):
            make_folds(IDS[:12], [1] * 10 + [2] * 2, k_out=3, k_in=2)

    def test_invalid_inputs(self):
        with pytest.raises(InvalidInputError):
            make_folds(["a", "a", "b", "b"], [1, 1, 2, 2], k_out=2, k_in=2)
        with pytest.raises(InvalidInputError):
            make_folds(IDS, LABELS, k_out=1)
        with pytest.raises(InvalidInputError):
            make_folds(IDS, LABELS[:-1])

    def test_inner_splits_exclude_outer_test(self, plan):
        index = {sid: i for i, sid in enumerate(IDS)}
        test = {index[s] for s in plan.outer[2]}
        for train, val in inner_splits(plan, 2, index):
            assert not test & set(train.tolist())
            assert not test & set(val.tolist())


class TestAccuracyAndAudit:
    """Test the accuracy helper and the leakage audit."""

    def test_accuracy(self):
        assert accuracy([1, 2, 2, 1], [1, 2, 1, 1]) == 0.75
        with pytest.raises(InvalidInputError):
            accuracy([], [])
        with pytest.raises(InvalidInputError):
            accuracy([1], [1, 2])

    def test_clean_record(self, plan):
        audit = ProtocolAudit(plan)
        audit.record("task", 0, plan.fingerprint(), set(plan.outer_train(0)))
        audit.check()
        assert audit.summary()["tasks_checked"] == 1

    def test_leak_detected(self, plan):
        audit = ProtocolAudit(plan)
        audit.record("task", 1, plan.fingerprint(), {plan.outer[1][0]})
        with pytest.raises(InvariantViolation, match="outer fold 1"):
            audit.check()

    def test_split_ids_cover_the_outer_training_set(self, plan):
        index = {sid: i for i, sid in enumerate(plan.ids)}
        assert split_ids(inner_splits(plan, 0, index), plan.ids) == set(plan.outer_train(0))

    def test_leak_through_a_split_detected(self, plan):
        """A test-fold row slipped into one tuning split is caught from the split itself."""
        index = {sid: i for i, sid in enumerate(plan.ids)}
        splits = inner_splits(plan, 2, index)
        train, val = splits[0]
        leaking = [(np.append(train, index[plan.outer[2][0]]), val)] + splits[1:]

        audit = ProtocolAudit(plan)
        audit.record_splits("RF-I", 2, plan.fingerprint(), splits, plan.ids)
        audit.check()
        audit.record_splits("GB-I", 2, plan.fingerprint(), leaking, plan.ids)
        with pytest.raises(InvariantViolation, match="GB-I: outer fold 2"):
            audit.check()

    def test_foreign_plan_detected(self, plan):
        audit = ProtocolAudit(plan)
        audit.record("task", 0, "0" * 64, set())
        assert audit.violations


class TestGate:
    """Test the outer and inner selection gates."""

    def test_outer_gate_orders_best_first(self):
        results = [
            fake_result("L2", [0.6, 0.6]),
            fake_result("L1", [0.6, 0.6]),
            fake_result("dtw", [0.9, 0.8]),
            fake_result("dcor", [0.5, 0.5]),
        ]
        assert [r.name for r in select_gate(results, 0.55)] == ["fkNN:dtw[a=0]", "fkNN:L1[a=0]", "fkNN:L2[a=0]"]

    def test_threshold_is_inclusive(self):
        assert select_gate([fake_result("L2", [0.55, 0.55])], 0.55)

    def test_inner_gate_is_per_fold(self):
        result = fake_result("L2", outer=[0.9, 0.9], inner=[0.5, 0.7])
        assert select_gate_inner([result], 0) == []
        assert select_gate_inner([result], 1) == [result]


class TestEvaluateWeak:
    """Test weak-learner evaluation over the fold plan."""

    def test_separating_learner(self, plan, matrices, specs):
        audit = ProtocolAudit(plan)
        results = evaluate_weak(specs, matrices, LABELS, plan, grids=GRIDS, seed=3, audit=audit)
        assert [r.name for r in results] == [s.name for s in specs]
        good = results[0]
        assert len(good.folds) == plan.k_out
        assert good.mean_outer == 1.0
        assert good.mean_inner == 1.0
        assert good.folds[0].oof_probs.shape == (30, 2)
        audit.check()
        assert audit.summary()["tasks_checked"] == 2 * plan.k_out

    def test_worker_count_does_not_change_results(self, plan, matrices, specs):
        serial = evaluate_weak(specs, matrices, LABELS, plan, grids=GRIDS, seed=3, n_jobs=1)
        parallel = evaluate_weak(specs, matrices, LABELS, plan, grids=GRIDS, seed=3, n_jobs=4)
        for a, b in zip(serial, parallel):
            assert [f.param for f in a.folds] == [f.param for f in b.folds]
            assert [f.outer_accuracy for f in a.folds] == [f.outer_accuracy for f in b.folds]

    def test_matrix_must_follow_plan(self, plan, matrices, specs):
        shuffled = {
            label: DistanceMatrix(m.spec, IDS[::-1], IDS[::-1], m.entries[::-1, ::-1])
            for label, m in matrices.items()
        }
        with pytest.raises(InvalidInputError):
            evaluate_weak(specs[:1], shuffled, LABELS, plan, grids=GRIDS)


class TestEvaluateEnsembles:
    """Test ensembles over gated weak learners."""

    @pytest.fixture
    def weak(self, plan, matrices, specs):
        return evaluate_weak(specs, matrices, LABELS, plan, grids=GRIDS, seed=3)

    def test_lc_and_forest(self, plan, weak):
        setup = EnsembleSetup(
            grid=SMALL_GRID, threshold=0.0, super_cv_folds=3,
            kinds=((SuperKind.RF, MeasureType.I), (SuperKind.LC, MeasureType.I)),
        )
        audit = ProtocolAudit(plan)
        results, candidates = evaluate_ensembles(weak, LABELS, plan, setup, seed=3, audit=audit)
        assert candidates == [weak[0].name, weak[1].name]
        assert [r.name for r in results] == ["RF-I", "LC"]
        for result in results:
            assert result.complete
            assert result.mean_outer >= 0.9
        audit.check()

    def test_type_two_skips_measure_learners(self, plan, weak, rng):
        setup = EnsembleSetup(grid=SMALL_GRID, threshold=0.0, super_cv_folds=3,
                              kinds=((SuperKind.RF, MeasureType.II),))
        covariates = rng.normal(size=(40, 1))
        results, _ = evaluate_ensembles(weak, LABELS, plan, setup, covariates, ("initiation_time",), seed=3)
        fold = results[0].folds[0]
        assert fold.model.learners == [weak[0].name]
        assert fold.model.covariate_names == ("initiation_time",)
        assert "initiation_time" in fold.importance

        only_measures, _ = evaluate_ensembles(weak[1:], LABELS, plan, setup, covariates, ("initiation_time",))
        assert not only_measures[0].complete
        assert all(f is None for f in only_measures[0].folds)

    def test_empty_gate(self, plan, weak):
        results, candidates = evaluate_ensembles(weak, LABELS, plan, EnsembleSetup(threshold=1.1))
        assert results == []
        assert candidates == []

    def test_inner_gate(self, plan, weak):
        setup = EnsembleSetup(grid=SMALL_GRID, gate="inner", threshold=0.9, kinds=((SuperKind.LC, MeasureType.I),))
        results, candidates = evaluate_ensembles(weak, LABELS, plan, setup)
        assert candidates == [weak[0].name]
        assert results[0].folds[0].model.learners == [weak[0].name]

    def test_unknown_gate(self, plan, weak):
        with pytest.raises(InvalidInputError):
            evaluate_ensembles(weak, LABELS, plan, EnsembleSetup(gate="sideways"))

    def test_worker_count_does_not_change_results(self, plan, weak):
        setup = EnsembleSetup(grid=SMALL_GRID, threshold=0.0, super_cv_folds=3,
                              kinds=((SuperKind.RF, MeasureType.I),))
        serial, _ = evaluate_ensembles(weak, LABELS, plan, setup, seed=5, n_jobs=1)
        parallel, _ = evaluate_ensembles(weak, LABELS, plan, setup, seed=5, n_jobs=3)
        assert [f.outer_accuracy for f in serial[0].folds] == [f.outer_accuracy for f in parallel[0].folds]
        assert [f.model.learners for f in serial[0].folds] == [f.model.learners for f in parallel[0].folds]
