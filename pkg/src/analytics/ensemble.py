"""
Ensembles
=========

Stacked generalization over weak-learner probabilities:
- LC: convex combination of the learners' probabilities, weights minimizing
  the Brier score on the simplex (positive lasso-type constraint)
- RF / GB: random forest or gradient boosting super-learner over a feature
  table of probabilities, optionally extended by measure covariates (type II)

RF and GB ensembles grow by forward selection: start from the two best
weak learners and keep each next candidate only if the tuned super-learner's
inner accuracy strictly increases.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.inspection import permutation_importance
from sklearn.model_selection import ParameterGrid

from .errors import InvalidInputError
from .seeding import derive_int, derive_rng
from .trees import BoostClassifier, BoostParams, ForestClassifier, ForestParams
from .weak_learners import fknn_predict

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
LCE_TOLERANCE = 1e-12
LCE_MAX_ITER = 100_000

# (train rows, validation rows) into the local row order
Split = Tuple[np.ndarray, np.ndarray]


class SuperKind(str, Enum):
    LC = "LC"
    RF = "RF"
    GB = "GB"


class MeasureType(str, Enum):
    I = "I"
    II = "II"


# =============================================================================
# LINEAR COMBINATION
# =============================================================================

@dataclass(eq=False)
class LCEWeights:
    """Nonnegative weights summing to one, one per weak learner."""

    omega: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if self.omega.ndim != 1 or self.omega.size == 0:
            raise InvalidInputError("LCE weights must be a nonempty vector")
        if np.any(self.omega < 0) or abs(self.omega.sum() - 1.0) > 1e-8:
            raise InvalidInputError(f"LCE weights must lie on the simplex, got {self.omega}")


def one_hot(labels: Sequence[int], classes: Sequence[int]) -> np.ndarray:
    return (np.asarray(labels)[:, None] == np.asarray(classes)[None, :]).astype(float)


def brier_score(probs: np.ndarray, labels: Sequence[int], classes: Sequence[int]) -> float:
    """Multi-class Brier score: mean over rows of the squared distance to the one-hot label."""
    probs = np.atleast_2d(probs)
    return float(np.mean(np.sum((one_hot(labels, classes) - probs) ** 2, axis=1)))


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) = 1} (sort-based)."""
    n = v.size
    a = -np.sort(-v)
    lambdas = (np.cumsum(a) - 1) / np.arange(1, n + 1)
    for k in range(n - 1, -1, -1):
        if a[k] > lambdas[k]:
            x = np.maximum(v - lambdas[k], 0)
            return x / x.sum()
    return np.full(n, 1.0 / n)


def _stack(probs: Sequence[np.ndarray]) -> np.ndarray:
    if not probs:
        raise InvalidInputError("At least one probability matrix is required")
    mats = [np.atleast_2d(np.asarray(p, dtype=float)) for p in probs]
    if any(m.shape != mats[0].shape for m in mats):
        raise InvalidInputError(f"Misaligned probability matrices: {[m.shape for m in mats]}")
    return np.stack(mats)


def lce_objective(omega: np.ndarray, probs: Sequence[np.ndarray], targets: np.ndarray) -> float:
    combined = np.tensordot(omega, _stack(probs), axes=1)
    return float(np.mean(np.sum((targets - combined) ** 2, axis=1)))


def lce_fit(
    probs: Sequence[np.ndarray],
    labels: Sequence[int],
    classes: Optional[Sequence[int]] = None,
) -> LCEWeights:
    """
    Brier-optimal simplex weights by projected gradient descent.

    Starts at uniform weights with step 1/lambda_max of the Hessian and stops
    once the objective drops by less than 1e-12. A vertex that scores strictly
    better than the iterate replaces it.
    """
    stacked = _stack(probs)
    m, n, _ = stacked.shape
    labels = np.asarray(labels)
    if labels.shape[0] != n:
        raise InvalidInputError(f"{n} probability rows but {labels.shape[0]} labels")
    classes = np.unique(labels) if classes is None else np.asarray(classes)
    if m == 1:
        return LCEWeights(np.ones(1))

    design = stacked.reshape(m, -1).T  # (n*L) x M
    target = one_hot(labels, classes).ravel()
    hessian = 2.0 / n * design.T @ design
    lipschitz = float(np.linalg.eigvalsh(hessian).max())
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0

    def objective(w: np.ndarray) -> float:
        residual = design @ w - target
        return float(residual @ residual / n)

    omega = np.full(m, 1.0 / m)
    current = objective(omega)
    for _ in range(LCE_MAX_ITER):
        gradient = 2.0 / n * design.T @ (design @ omega - target)
        candidate = project_to_simplex(omega - step * gradient)
        value = objective(candidate)
        decrease = current - value
        if value < current:
            omega, current = candidate, value
        if decrease < LCE_TOLERANCE:
            break

    for vertex in range(m):
        e = np.zeros(m)
        e[vertex] = 1.0
        value = objective(e)
        if value < current:
            omega, current = e, value
    return LCEWeights(omega)


def lce_predict(weights: LCEWeights, probs: Sequence[np.ndarray]) -> np.ndarray:
    """Weighted sum of the learners' probability vectors (or matrices)."""
    if len(probs) != weights.omega.size:
        raise InvalidInputError(f"{weights.omega.size} weights but {len(probs)} learners")
    stacked = np.stack([np.asarray(p, dtype=float) for p in probs])
    return np.tensordot(weights.omega, stacked, axes=1)


# =============================================================================
# FEATURE TABLES
# =============================================================================

@dataclass(frozen=True)
class FeatureColumn:
    """Provenance of one super-learner column."""

    source: str  # "learner" or "measure"
    name: str
    cls: Optional[int] = None


@dataclass(eq=False)
class FeatureTable:
    values: np.ndarray
    columns: List[FeatureColumn]


def build_features(
    learners: Sequence[str],
    probs: Dict[str, np.ndarray],
    classes: Sequence[int],
    covariates: Optional[np.ndarray] = None,
    covariate_names: Sequence[str] = (),
) -> FeatureTable:
    """
    One column per (learner, class), dropping the last class when L = 2,
    followed by any measure covariates.
    """
    classes = list(classes)
    kept = classes[:-1] if len(classes) == 2 else classes
    blocks, columns = [], []
    for name in learners:
        p = np.atleast_2d(probs[name])
        blocks.append(p[:, :len(kept)])
        columns.extend(FeatureColumn("learner", name, int(c)) for c in kept)
    if covariates is not None and len(covariate_names):
        cov = np.atleast_2d(np.asarray(covariates, dtype=float))
        if cov.shape[1] != len(covariate_names):
            raise InvalidInputError(f"{cov.shape[1]} covariate columns but {len(covariate_names)} names")
        blocks.append(cov)
        columns.extend(FeatureColumn("measure", n) for n in covariate_names)
    return FeatureTable(values=np.hstack(blocks), columns=columns)


# =============================================================================
# SUPER-LEARNER TUNING
# =============================================================================

@dataclass
class SuperLearnerGrid:
    """Parameter grids tuned per candidate set and outer fold."""

    rf_n_trees: Tuple[int, ...] = (100, 300, 500)
    rf_mtry: Tuple[str, ...] = ("sqrt", "third", "all")
    rf_min_leaf: int = 5
    gb_n_trees: Tuple[int, ...] = (50, 100, 200)
    gb_shrinkage: Tuple[float, ...] = (0.01, 0.1)
    gb_depth: Tuple[int, ...] = (1, 2, 3)
    gb_min_leaf: int = 5
    gb_subsample: float = 1.0

    def mtry_values(self, n_features: int) -> List[int]:
        rules = {
            "sqrt": math.ceil(math.sqrt(n_features)),
            "third": math.ceil(n_features / 3),
            "all": n_features,
        }
        values = {min(n_features, max(1, int(rules.get(r, r)))) for r in self.rf_mtry}
        return sorted(values)

    def candidates(self, kind: SuperKind, n_features: int) -> List[Dict[str, Any]]:
        if kind == SuperKind.RF:
            grid = {"n_trees": list(self.rf_n_trees), "mtry": self.mtry_values(n_features)}
        elif kind == SuperKind.GB:
            grid = {
                "n_trees": list(self.gb_n_trees),
                "shrinkage": list(self.gb_shrinkage),
                "depth": list(self.gb_depth),
            }
        else:
            return [{}]
        return list(ParameterGrid(grid))


def make_super_learner(
    kind: SuperKind,
    params: Dict[str, Any],
    grid: SuperLearnerGrid,
    seed: int,
    n_jobs: int = 1,
):
    if kind == SuperKind.RF:
        forest = ForestParams(n_trees=params["n_trees"], mtry=params["mtry"], min_leaf=grid.rf_min_leaf)
        return ForestClassifier.from_params(forest, random_state=seed, n_jobs=n_jobs)
    if kind == SuperKind.GB:
        boost = BoostParams(
            n_trees=params["n_trees"], shrinkage=params["shrinkage"], depth=params["depth"],
            min_leaf=grid.gb_min_leaf, subsample=grid.gb_subsample,
        )
        return BoostClassifier.from_params(boost, random_state=seed)
    raise InvalidInputError(f"{kind} is not a tree super-learner")


def align_probs(probs: np.ndarray, fitted: Sequence[int], classes: Sequence[int]) -> np.ndarray:
    """Expand estimator columns (classes seen in training) to the full class list."""
    out = np.zeros((probs.shape[0], len(classes)))
    position = {int(c): i for i, c in enumerate(classes)}
    for j, c in enumerate(fitted):
        out[:, position[int(c)]] = probs[:, j]
    return out


def _argmax(probs: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    return np.asarray(classes)[np.argmax(probs, axis=1)]


@dataclass
class TrailStep:
    """One forward-selection decision."""

    learner: str
    accuracy: float
    accepted: bool


@dataclass
class SelectionResult:
    selected: List[str]
    accuracy: float
    params: Dict[str, Any] = field(default_factory=dict)
    trail: List[TrailStep] = field(default_factory=list)


def _lc_accuracy(
    learners: Sequence[str],
    probs: Dict[str, np.ndarray],
    labels: np.ndarray,
    classes: Sequence[int],
    splits: Sequence[Split],
) -> float:
    scores = []
    for train, val in splits:
        weights = lce_fit([probs[n][train] for n in learners], labels[train], classes)
        combined = lce_predict(weights, [probs[n][val] for n in learners])
        scores.append(np.mean(_argmax(combined, classes) == labels[val]))
    return float(np.mean(scores))


def tune_super_learner(
    kind: SuperKind,
    table: FeatureTable,
    labels: np.ndarray,
    classes: Sequence[int],
    splits: Sequence[Split],
    grid: SuperLearnerGrid,
    seed: int,
    n_jobs: int = 1,
) -> Tuple[Dict[str, Any], float]:
    """Best grid point by mean validation accuracy; ties keep the earlier grid point."""
    best_params, best_accuracy = {}, -1.0
    for params in grid.candidates(kind, table.values.shape[1]):
        scores = []
        for train, val in splits:
            model = make_super_learner(kind, params, grid, seed, n_jobs).fit(table.values[train], labels[train])
            probs = align_probs(model.predict_proba(table.values[val]), model.classes_, classes)
            scores.append(np.mean(_argmax(probs, classes) == labels[val]))
        accuracy = float(np.mean(scores))
        if accuracy > best_accuracy:
            best_params, best_accuracy = dict(params), accuracy
    return best_params, best_accuracy


def forward_select(
    candidates: Sequence[str],
    kind: SuperKind,
    probs: Dict[str, np.ndarray],
    labels: Sequence[int],
    classes: Sequence[int],
    splits: Sequence[Split],
    grid: Optional[SuperLearnerGrid] = None,
    build: Optional[Callable[[Sequence[str]], FeatureTable]] = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> SelectionResult:
    """
    Grow an ensemble over candidates ordered best first.

    LC combines every candidate (its weights do the selection); RF and GB
    start from the top two and accept each further candidate only on a
    strict gain in tuned inner accuracy. `build` turns a learner list into
    the super-learner's feature table (type II adds covariates there).
    """
    if not candidates:
        raise InvalidInputError("forward_select needs at least one candidate")
    labels = np.asarray(labels)
    grid = grid or SuperLearnerGrid()
    build = build or (lambda names: build_features(names, probs, classes))

    def score(names: Sequence[str]) -> Tuple[Dict[str, Any], float]:
        if kind == SuperKind.LC:
            return {}, _lc_accuracy(names, probs, labels, classes, splits)
        return tune_super_learner(kind, build(names), labels, classes, splits, grid, seed, n_jobs)

    if kind == SuperKind.LC:
        trail = []
        for i, name in enumerate(candidates):
            _, accuracy = score(candidates[:i + 1])
            trail.append(TrailStep(name, accuracy, True))
        return SelectionResult(list(candidates), trail[-1].accuracy, {}, trail)

    selected = list(candidates[:2])
    params, accuracy = score(selected)
    trail = [TrailStep(name, accuracy, True) for name in selected]
    for name in candidates[2:]:
        trial_params, trial_accuracy = score(selected + [name])
        accepted = trial_accuracy > accuracy
        trail.append(TrailStep(name, trial_accuracy, accepted))
        if accepted:
            selected.append(name)
            params, accuracy = trial_params, trial_accuracy
        logger.debug(f"{kind.value}: {name} {'accepted' if accepted else 'rejected'} ({trial_accuracy:.4f})")
    return SelectionResult(selected, accuracy, params, trail)


# =============================================================================
# FITTED ENSEMBLES
# =============================================================================

@dataclass(eq=False)
class EnsembleModel:
    """A fitted ensemble: selected weak learners plus the super-learner."""

    kind: SuperKind
    mtype: MeasureType
    learners: List[str]
    classes: Tuple[int, ...]
    weights: Optional[LCEWeights] = None
    model: Optional[Any] = None  # ForestClassifier | BoostClassifier
    covariate_names: Tuple[str, ...] = ()
    params: Dict[str, Any] = field(default_factory=dict)
    trail: List[TrailStep] = field(default_factory=list)

    def __post_init__(self):
        if not self.learners:
            raise InvalidInputError("An ensemble needs at least one weak learner")
        if self.kind == SuperKind.LC and self.mtype == MeasureType.II:
            raise InvalidInputError("LC ensembles only incorporate measures as weak learners (type I)")
        self.classes = tuple(int(c) for c in self.classes)

    @property
    def name(self) -> str:
        return self.kind.value if self.kind == SuperKind.LC else f"{self.kind.value}-{self.mtype.value}"

    def predict_proba(
        self,
        learner_probs: Sequence[np.ndarray],
        covariates: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Probabilities from the selected learners' outputs, in `learners` order."""
        if len(learner_probs) != len(self.learners):
            raise InvalidInputError(f"{self.name} expects {len(self.learners)} learners, got {len(learner_probs)}")
        if self.kind == SuperKind.LC:
            return np.atleast_2d(lce_predict(self.weights, [np.atleast_2d(p) for p in learner_probs]))
        table = self.feature_table(learner_probs, covariates)
        return align_probs(self.model.predict_proba(table.values), self.model.classes_, self.classes)

    def feature_table(self, learner_probs: Sequence[np.ndarray], covariates: Optional[np.ndarray]) -> FeatureTable:
        use_covariates = self.mtype == MeasureType.II and bool(self.covariate_names)
        if use_covariates and covariates is None:
            raise InvalidInputError(f"{self.name} needs measure covariates")
        return build_features(
            self.learners,
            dict(zip(self.learners, learner_probs)),
            self.classes,
            covariates if use_covariates else None,
            self.covariate_names if use_covariates else (),
        )

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind.value,
            "type": self.mtype.value,
            "learners": list(self.learners),
            "classes": list(self.classes),
            "covariates": list(self.covariate_names),
            "params": dict(self.params),
            "trail": [{"learner": s.learner, "accuracy": s.accuracy, "accepted": s.accepted} for s in self.trail],
        }
        if self.kind == SuperKind.LC:
            out["weights"] = self.weights.omega.tolist()
        else:
            out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EnsembleModel":
        if data.get("format_version") != FORMAT_VERSION:
            raise InvalidInputError(f"Unsupported ensemble format version: {data.get('format_version')}")
        kind = SuperKind(data["kind"])
        model = None
        if kind == SuperKind.RF:
            model = ForestClassifier.from_dict(data["model"])
        elif kind == SuperKind.GB:
            model = BoostClassifier.from_dict(data["model"])
        return cls(
            kind=kind,
            mtype=MeasureType(data["type"]),
            learners=list(data["learners"]),
            classes=tuple(data["classes"]),
            weights=LCEWeights(np.asarray(data["weights"])) if kind == SuperKind.LC else None,
            model=model,
            covariate_names=tuple(data.get("covariates", ())),
            params=dict(data.get("params", {})),
            trail=[TrailStep(**s) for s in data.get("trail", [])],
        )


def fit_ensemble(
    selection: SelectionResult,
    kind: SuperKind,
    mtype: MeasureType,
    probs: Dict[str, np.ndarray],
    labels: Sequence[int],
    classes: Sequence[int],
    grid: Optional[SuperLearnerGrid] = None,
    covariates: Optional[np.ndarray] = None,
    covariate_names: Sequence[str] = (),
    seed: int = 0,
    n_jobs: int = 1,
) -> EnsembleModel:
    """Refit the selected ensemble with its tuned parameters on all rows."""
    labels = np.asarray(labels)
    grid = grid or SuperLearnerGrid()
    ensemble = EnsembleModel(
        kind=kind,
        mtype=mtype,
        learners=list(selection.selected),
        classes=tuple(classes),
        covariate_names=tuple(covariate_names) if mtype == MeasureType.II else (),
        params=dict(selection.params),
        trail=list(selection.trail),
    )
    if kind == SuperKind.LC:
        ensemble.weights = lce_fit([probs[n] for n in ensemble.learners], labels, classes)
        return ensemble
    table = ensemble.feature_table([probs[n] for n in ensemble.learners], covariates)
    ensemble.model = make_super_learner(kind, selection.params, grid, seed, n_jobs).fit(table.values, labels)
    return ensemble


def ensemble_predict(
    model: EnsembleModel,
    learner_probs: Sequence[np.ndarray],
    covariates: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """(probabilities, classes); exact probability ties are broken by rng."""
    rng = rng or derive_rng(0, model.name)
    probs = model.predict_proba(learner_probs, covariates)
    predicted = np.array([fknn_predict(row, rng, model.classes) for row in probs], dtype=int)
    return probs, predicted


def grouped_importance(
    model: EnsembleModel,
    learner_probs: Sequence[np.ndarray],
    labels: Sequence[int],
    covariates: Optional[np.ndarray] = None,
    seed: int = 0,
    n_repeats: int = 5,
) -> Dict[str, float]:
    """
    Permutation importance (accuracy drop) of the super-learner columns,
    summed per weak learner or measure.
    """
    if model.kind == SuperKind.LC:
        return {n: float(w) for n, w in zip(model.learners, model.weights.omega)}
    table = model.feature_table(learner_probs, covariates)
    result = permutation_importance(
        model.model, table.values, np.asarray(labels),
        scoring="accuracy", n_repeats=n_repeats, random_state=derive_int(seed, model.name),
    )
    grouped: Dict[str, float] = {}
    for column, value in zip(table.columns, result.importances_mean):
        grouped[column.name] = grouped.get(column.name, 0.0) + float(value)
    return grouped
