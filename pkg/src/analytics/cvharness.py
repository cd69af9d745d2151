"""
Nested Cross-Validation Harness
===============================

Runs the evaluation protocol shared by every learner and ensemble:
1. One fixed, stratified FoldPlan (outer test folds, inner folds per outer
   training set) used by everything in a run
2. Weak learners tuned on the inner folds and scored on the outer fold
3. A selection gate on mean accuracy (default 0.55)
4. LC / RF / GB ensembles over the gated learners, type I and type II
5. An audit that no outer-test id reached a tuning decision
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import accuracy_score
from sklearn.model_selection import StratifiedKFold

from .ensemble import (
    EnsembleModel,
    MeasureType,
    Split,
    SuperKind,
    SuperLearnerGrid,
    brier_score,
    build_features,
    ensemble_predict,
    fit_ensemble,
    forward_select,
    grouped_importance,
)
from .errors import InvalidInputError, InvariantViolation
from .semimetrics import DistanceMatrix
from .seeding import derive_int, derive_rng
from .weak_learners import (
    LearnerBase,
    WeakLearnerSpec,
    predict_classes,
    predict_proba,
    tune_param,
)

logger = logging.getLogger(__name__)

DEFAULT_GATE = 0.55


# =============================================================================
# FOLD PLAN
# =============================================================================

@dataclass(eq=False)
class FoldPlan:
    """Outer test folds and, per outer fold, inner folds of its complement."""

    ids: Tuple[str, ...]
    outer: List[List[str]]
    inner: List[List[List[str]]]
    seed: int
    k_out: int
    k_in: int

    def outer_train(self, fold: int) -> List[str]:
        held_out = set(self.outer[fold])
        return [sid for sid in self.ids if sid not in held_out]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ids": list(self.ids),
            "outer": self.outer,
            "inner": self.inner,
            "seed": self.seed,
            "k_out": self.k_out,
            "k_in": self.k_in,
        }

    def fingerprint(self) -> str:
        document = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(document.encode("utf-8")).hexdigest()


def _stratified_folds(
    ids: Sequence[str],
    labels: Sequence[int],
    k: int,
    rng: np.random.Generator,
    context: str,
) -> List[List[str]]:
    position = {sid: i for i, sid in enumerate(ids)}
    folds: List[List[str]] = [[] for _ in range(k)]
    offset = 0
    for cls in sorted(set(labels)):
        members = [sid for sid, label in zip(ids, labels) if label == cls]
        if len(members) < k:
            raise InvalidInputError(
                f"Cannot stratify {context} into {k} folds: class {cls} has only {len(members)} members"
            )
        for j, idx in enumerate(rng.permutation(len(members))):
            folds[(offset + j) % k].append(members[idx])
        offset += len(members)
    return [sorted(fold, key=position.__getitem__) for fold in folds]


def make_folds(
    ids: Sequence[str],
    labels: Sequence[int],
    k_out: int = 10,
    k_in: int = 5,
    seed: int = 0,
) -> FoldPlan:
    """
    Stratified nested folds: per class, ids are shuffled with a seeded
    generator and dealt round-robin, continuing the deal across classes.
    """
    ids, labels = list(ids), [int(l) for l in labels]
    if len(ids) != len(labels):
        raise InvalidInputError(f"{len(ids)} ids but {len(labels)} labels")
    if len(set(ids)) != len(ids):
        raise InvalidInputError("Sample ids must be unique")
    if k_out < 2 or k_in < 2:
        raise InvalidInputError(f"Fold counts must be >= 2, got {k_out}/{k_in}")
    if len(ids) < k_out:
        raise InvalidInputError(f"{len(ids)} samples cannot fill {k_out} outer folds")

    label_of = dict(zip(ids, labels))
    outer = _stratified_folds(ids, labels, k_out, derive_rng(seed, "outer-folds"), "the sample")
    inner = []
    for o in range(k_out):
        held_out = set(outer[o])
        rest = [sid for sid in ids if sid not in held_out]
        inner.append(_stratified_folds(
            rest, [label_of[s] for s in rest], k_in, derive_rng(seed, "inner-folds", o), f"outer fold {o}"
        ))
    return FoldPlan(ids=tuple(ids), outer=outer, inner=inner, seed=int(seed), k_out=k_out, k_in=k_in)


def accuracy(predicted: Sequence[int], truth: Sequence[int]) -> float:
    """Share of correct predictions."""
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise InvalidInputError(f"Length mismatch: {predicted.size} predictions, {truth.size} labels")
    if truth.size == 0:
        raise InvalidInputError("Accuracy of an empty prediction set is undefined")
    return float(accuracy_score(truth, predicted))


# =============================================================================
# PROTOCOL AUDIT
# =============================================================================

def split_ids(splits: Sequence[Split], ids: Sequence[str]) -> Set[str]:
    """Every id a list of index splits reads, training and validation sides alike."""
    return {ids[int(i)] for split in splits for part in split for i in part}


class ProtocolAudit:
    """Records which plan and which ids every tuning decision used."""

    def __init__(self, plan: FoldPlan):
        self.plan = plan
        self.fingerprint = plan.fingerprint()
        self.records: List[Tuple[str, int, str]] = []
        self.violations: List[str] = []

    def record(self, task: str, fold: int, plan_fingerprint: str, tuning_ids: Set[str]) -> None:
        self.records.append((task, fold, plan_fingerprint))
        if plan_fingerprint != self.fingerprint:
            self.violations.append(f"{task}: fold plan differs from the run's plan")
        leaked = tuning_ids & set(self.plan.outer[fold])
        if leaked:
            self.violations.append(f"{task}: outer fold {fold} test ids used in tuning: {sorted(leaked)[:5]}")

    def record_splits(
        self,
        task: str,
        fold: int,
        plan_fingerprint: str,
        splits: Sequence[Split],
        ids: Sequence[str],
    ) -> None:
        """Record the ids that the (train, validation) index splits over `ids` actually touch."""
        self.record(task, fold, plan_fingerprint, split_ids(splits, ids))

    def check(self) -> None:
        if self.violations:
            raise InvariantViolation("; ".join(self.violations))

    def summary(self) -> Dict[str, Any]:
        return {
            "fold_plan_fingerprint": self.fingerprint,
            "tasks_checked": len(self.records),
            "violations": list(self.violations),
        }


# =============================================================================
# WEAK LEARNERS
# =============================================================================

@dataclass
class WeakFold:
    """One weak learner on one outer fold."""

    param: float
    inner_accuracy: float
    outer_accuracy: float
    brier: float
    rows: np.ndarray  # matrix indices of the outer-training rows
    oof_probs: np.ndarray  # out-of-fold probabilities on `rows`
    test_rows: np.ndarray
    test_probs: np.ndarray
    fallbacks: int = 0


@dataclass
class WeakResult:
    spec: WeakLearnerSpec
    folds: List[WeakFold] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def mean_outer(self) -> float:
        return float(np.mean([f.outer_accuracy for f in self.folds]))

    @property
    def mean_inner(self) -> float:
        return float(np.mean([f.inner_accuracy for f in self.folds]))

    @property
    def mean_brier(self) -> float:
        return float(np.mean([f.brier for f in self.folds]))

    @property
    def fallbacks(self) -> int:
        return sum(f.fallbacks for f in self.folds)


def _plan_indices(plan: FoldPlan, matrix: DistanceMatrix) -> Dict[str, int]:
    if not matrix.is_square or matrix.row_ids != plan.ids:
        raise InvalidInputError(f"{matrix.spec.label}: matrix ids do not follow the fold plan")
    return {sid: i for i, sid in enumerate(matrix.row_ids)}


def inner_splits(plan: FoldPlan, fold: int, index: Dict[str, int]) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Inner (train, validation) splits of an outer fold as matrix indices."""
    train_ids = plan.outer_train(fold)
    splits = []
    for val_ids in plan.inner[fold]:
        held = set(val_ids)
        splits.append((
            np.array([index[s] for s in train_ids if s not in held], dtype=int),
            np.array([index[s] for s in val_ids], dtype=int),
        ))
    return splits


def _evaluate_fold(
    spec: WeakLearnerSpec,
    matrix: DistanceMatrix,
    labels: np.ndarray,
    classes: np.ndarray,
    plan: FoldPlan,
    fold: int,
    grid: Optional[Sequence[float]],
    seed: int,
) -> Tuple[WeakFold, Set[str]]:
    index = _plan_indices(plan, matrix)
    splits = inner_splits(plan, fold, index)
    tuned = tune_param(splits, spec, matrix.entries, labels, grid, classes, seed=seed, fold=fold)

    train = np.sort(np.array([index[s] for s in plan.outer_train(fold)], dtype=int))
    test = np.array([index[s] for s in plan.outer[fold]], dtype=int)
    test_probs, fallbacks = predict_proba(tuned.spec, matrix.entries[np.ix_(test, train)], labels[train], classes)
    predicted = predict_classes(test_probs, classes, derive_rng(seed, f"{spec.name}/test", fold))

    if tuned.rows is None or not np.array_equal(tuned.rows, train):
        raise InvariantViolation(f"{spec.name}: inner folds of outer fold {fold} do not cover its training set")
    tuning_ids = split_ids(splits, matrix.row_ids)

    result = WeakFold(
        param=float(tuned.spec.param),
        inner_accuracy=tuned.accuracy,
        outer_accuracy=accuracy(predicted, labels[test]),
        brier=brier_score(test_probs, labels[test], classes),
        rows=train,
        oof_probs=tuned.oof_probs,
        test_rows=test,
        test_probs=test_probs,
        fallbacks=fallbacks + tuned.fallbacks,
    )
    return result, tuning_ids


def evaluate_weak(
    specs: Sequence[WeakLearnerSpec],
    matrices: Dict[str, DistanceMatrix],
    labels: Sequence[int],
    plan: FoldPlan,
    grids: Optional[Dict[LearnerBase, Sequence[float]]] = None,
    seed: int = 0,
    n_jobs: int = 1,
    audit: Optional[ProtocolAudit] = None,
) -> List[WeakResult]:
    """
    Tune every learner on the inner folds and score it on each outer fold.

    matrices are keyed by semi-metric label and must follow plan.ids; labels
    likewise. Results come back in `specs` order whatever n_jobs is.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    grids = grids or {}
    tasks = [(s, o) for s in specs for o in range(plan.k_out)]

    def run(spec: WeakLearnerSpec, fold: int):
        return _evaluate_fold(
            spec, matrices[spec.semimetric.label], labels, classes, plan, fold, grids.get(spec.base), seed
        )

    outcomes = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(run)(s, o) for s, o in tasks)

    results = {spec.name: WeakResult(spec=spec) for spec in specs}
    for (spec, fold), (weak_fold, tuning_ids) in zip(tasks, outcomes):
        results[spec.name].folds.append(weak_fold)
        if audit is not None:
            audit.record(spec.name, fold, plan.fingerprint(), tuning_ids)

    for result in results.values():
        logger.info(
            f"  {result.name}: outer {result.mean_outer:.4f}, inner {result.mean_inner:.4f}"
            + (f", {result.fallbacks} kernel fallbacks" if result.fallbacks else "")
        )
    return [results[spec.name] for spec in specs]


# =============================================================================
# SELECTION GATE
# =============================================================================

def select_gate(results: Sequence[WeakResult], threshold: float = DEFAULT_GATE) -> List[WeakResult]:
    """Learners with mean outer accuracy >= threshold, best first, ties by name."""
    passed = [r for r in results if r.mean_outer >= threshold]
    return sorted(passed, key=lambda r: (-r.mean_outer, r.name))


def select_gate_inner(
    results: Sequence[WeakResult],
    fold: int,
    threshold: float = DEFAULT_GATE,
) -> List[WeakResult]:
    """Per-fold gate on inner accuracy, which never sees the outer test fold."""
    passed = [r for r in results if r.folds[fold].inner_accuracy >= threshold]
    return sorted(passed, key=lambda r: (-r.folds[fold].inner_accuracy, r.name))


# =============================================================================
# ENSEMBLES
# =============================================================================

@dataclass
class EnsembleFold:
    """One ensemble on one outer fold."""

    model: EnsembleModel
    inner_accuracy: float
    outer_accuracy: float
    brier: float
    importance: Dict[str, float] = field(default_factory=dict)
    oob_score: Optional[float] = None


@dataclass
class EnsembleResult:
    kind: SuperKind
    mtype: MeasureType
    folds: List[Optional[EnsembleFold]] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.kind.value if self.kind == SuperKind.LC else f"{self.kind.value}-{self.mtype.value}"

    @property
    def complete(self) -> bool:
        return bool(self.folds) and all(f is not None for f in self.folds)

    @property
    def mean_outer(self) -> float:
        return float(np.mean([f.outer_accuracy for f in self.folds if f is not None]))

    @property
    def mean_inner(self) -> float:
        return float(np.mean([f.inner_accuracy for f in self.folds if f is not None]))

    @property
    def mean_brier(self) -> float:
        return float(np.mean([f.brier for f in self.folds if f is not None]))


ENSEMBLE_KINDS: Tuple[Tuple[SuperKind, MeasureType], ...] = (
    (SuperKind.RF, MeasureType.I),
    (SuperKind.GB, MeasureType.I),
    (SuperKind.RF, MeasureType.II),
    (SuperKind.GB, MeasureType.II),
    (SuperKind.LC, MeasureType.I),
)


@dataclass
class EnsembleSetup:
    """Ensemble settings the harness needs, detached from the run config."""

    grid: SuperLearnerGrid = field(default_factory=SuperLearnerGrid)
    gate: str = "outer"
    threshold: float = DEFAULT_GATE
    super_cv_folds: Optional[int] = 10
    kinds: Tuple[Tuple[SuperKind, MeasureType], ...] = ENSEMBLE_KINDS
    importance_repeats: int = 5


def _local_splits(plan: FoldPlan, fold: int, rows_ids: Sequence[str]) -> List[Tuple[np.ndarray, np.ndarray]]:
    local = {sid: i for i, sid in enumerate(rows_ids)}
    splits = []
    for val_ids in plan.inner[fold]:
        val = np.array(sorted(local[s] for s in val_ids), dtype=int)
        mask = np.ones(len(rows_ids), dtype=bool)
        mask[val] = False
        splits.append((np.flatnonzero(mask), val))
    return splits


def _super_splits(
    labels: np.ndarray,
    n_folds: int,
    seed: int,
    fold: int,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    _, counts = np.unique(labels, return_counts=True)
    n_splits = max(2, min(n_folds, int(counts.min())))
    splitter = StratifiedKFold(n_splits=n_splits, shuffle=True, random_state=derive_int(seed, "super-cv", fold))
    return [(train, val) for train, val in splitter.split(np.zeros(labels.size), labels)]


def _ensemble_fold(
    kind: SuperKind,
    mtype: MeasureType,
    candidates: List[WeakResult],
    fold: int,
    plan: FoldPlan,
    labels: np.ndarray,
    classes: np.ndarray,
    covariates: Optional[np.ndarray],
    covariate_names: Sequence[str],
    setup: EnsembleSetup,
    seed: int,
    n_jobs: int,
    audit: Optional[ProtocolAudit],
) -> Optional[EnsembleFold]:
    if mtype == MeasureType.II:
        candidates = [c for c in candidates if not c.spec.semimetric.is_measure_based]
    if not candidates:
        return None

    first = candidates[0].folds[fold]
    rows, test = first.rows, first.test_rows
    rows_ids = [plan.ids[i] for i in rows]
    y_train, y_test = labels[rows], labels[test]

    oof = {c.name: c.folds[fold].oof_probs for c in candidates}
    test_probs = {c.name: c.folds[fold].test_probs for c in candidates}
    use_covariates = mtype == MeasureType.II and covariates is not None and len(covariate_names) > 0
    cov_train = covariates[rows] if use_covariates else None
    cov_test = covariates[test] if use_covariates else None
    names = tuple(covariate_names) if use_covariates else ()

    if kind == SuperKind.LC or setup.super_cv_folds is None:
        splits = _local_splits(plan, fold, rows_ids)
    else:
        splits = _super_splits(y_train, setup.super_cv_folds, seed, fold)
    task = f"{kind.value}-{mtype.value}"
    if audit is not None:
        audit.record_splits(task, fold, plan.fingerprint(), splits, rows_ids)

    selection = forward_select(
        [c.name for c in candidates],
        kind,
        oof,
        y_train,
        classes,
        splits,
        grid=setup.grid,
        build=lambda learners: build_features(learners, oof, classes, cov_train, names),
        seed=derive_int(seed, task, fold),
        n_jobs=n_jobs,
    )
    model = fit_ensemble(
        selection, kind, mtype, oof, y_train, classes, setup.grid,
        covariates=cov_train, covariate_names=names, seed=derive_int(seed, task, fold), n_jobs=n_jobs,
    )

    learner_test = [test_probs[n] for n in model.learners]
    probs, predicted = ensemble_predict(model, learner_test, cov_test, derive_rng(seed, f"{task}/test", fold))
    importance = grouped_importance(
        model, learner_test, y_test, cov_test, seed=derive_int(seed, f"{task}/importance", fold),
        n_repeats=setup.importance_repeats,
    )
    return EnsembleFold(
        model=model,
        inner_accuracy=selection.accuracy,
        outer_accuracy=accuracy(predicted, y_test),
        brier=brier_score(probs, y_test, classes),
        importance=importance,
        oob_score=getattr(model.model, "oob_score_", None),
    )


def evaluate_ensembles(
    weak: Sequence[WeakResult],
    labels: Sequence[int],
    plan: FoldPlan,
    setup: Optional[EnsembleSetup] = None,
    covariates: Optional[np.ndarray] = None,
    covariate_names: Sequence[str] = (),
    seed: int = 0,
    n_jobs: int = 1,
    audit: Optional[ProtocolAudit] = None,
) -> Tuple[List[EnsembleResult], List[str]]:
    """
    Build every configured ensemble on every outer fold.

    Returns the results and the gated candidate names (outer gate) or the
    union of per-fold candidates (inner gate). An empty candidate list
    yields no ensembles.
    """
    setup = setup or EnsembleSetup()
    labels = np.asarray(labels)
    classes = np.unique(labels)

    if setup.gate == "outer":
        gated = select_gate(weak, setup.threshold)
        per_fold = [gated] * plan.k_out
        candidate_names = [r.name for r in gated]
    elif setup.gate == "inner":
        per_fold = [select_gate_inner(weak, o, setup.threshold) for o in range(plan.k_out)]
        candidate_names = sorted({r.name for fold in per_fold for r in fold})
    else:
        raise InvalidInputError(f"Unknown gate: {setup.gate}")

    if not any(per_fold):
        logger.warning("No weak learner passed the selection gate; ensembles skipped")
        return [], candidate_names

    tasks = [(kind, mtype, o) for kind, mtype in setup.kinds for o in range(plan.k_out)]

    def run(kind: SuperKind, mtype: MeasureType, fold: int):
        return _ensemble_fold(
            kind, mtype, list(per_fold[fold]), fold, plan, labels, classes,
            covariates, covariate_names, setup, seed, 1, audit,
        )

    outcomes = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(run)(*t) for t in tasks)

    results: Dict[Tuple[SuperKind, MeasureType], EnsembleResult] = {
        key: EnsembleResult(kind=key[0], mtype=key[1]) for key in setup.kinds
    }
    for (kind, mtype, _), outcome in zip(tasks, outcomes):
        results[(kind, mtype)].folds.append(outcome)

    ordered = [results[key] for key in setup.kinds]
    for result in ordered:
        if any(f is not None for f in result.folds):
            logger.info(f"  {result.name}: outer {result.mean_outer:.4f}, inner {result.mean_inner:.4f}")
        else:
            logger.info(f"  {result.name}: no candidates")
    return ordered, candidate_names
