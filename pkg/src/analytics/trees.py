"""
Tree Super-Learners
===================

CART trees, random forests and gradient boosting used as second-stage
models over weak-learner probabilities. The estimators follow the
scikit-learn estimator API so they plug into its model-selection and
inspection utilities.

Split rules shared by all trees:
- candidate thresholds at midpoints of consecutive distinct column values
- rows with value <= threshold go left
- best split by Gini impurity (classification) or squared error
  (regression); ties go to the lower column, then the lower threshold
- every child keeps at least `min_leaf` rows
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

_LOGIT_CLIP = 1e-6
_MIN_HESSIAN = 1e-12


@dataclass
class TreeParams:
    max_depth: Optional[int] = None
    min_leaf: int = 1


@dataclass
class ForestParams:
    n_trees: int = 500
    mtry: Optional[int] = None
    min_leaf: int = 5
    max_depth: Optional[int] = None
    bootstrap: bool = True


@dataclass
class BoostParams:
    n_trees: int = 100
    shrinkage: float = 0.1
    depth: int = 1
    min_leaf: int = 5
    subsample: float = 1.0


# =============================================================================
# TREE STRUCTURE
# =============================================================================

@dataclass(eq=False)
class TreeStructure:
    """Flat binary tree; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # one row per node: class frequencies or [real]

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    @property
    def depth(self) -> int:
        depths = np.zeros(self.feature.size, dtype=int)
        for node in range(self.feature.size):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            columns = self.feature[node]
            active = np.flatnonzero(columns >= 0)
            if active.size == 0:
                return node
            current = node[active]
            go_left = X[active, columns[active]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TreeStructure":
        return cls(
            feature=np.asarray(data["feature"], dtype=int),
            threshold=np.asarray(data["threshold"], dtype=float),
            left=np.asarray(data["left"], dtype=int),
            right=np.asarray(data["right"], dtype=int),
            value=np.asarray(data["value"], dtype=float).reshape(len(data["feature"]), -1),
        )


def _best_split(
    X: np.ndarray,
    targets: np.ndarray,
    rows: np.ndarray,
    columns: Sequence[int],
    min_leaf: int,
    criterion: str,
) -> Optional[Tuple[int, float]]:
    n = rows.size
    left_n = np.arange(1, n, dtype=float)
    right_n = n - left_n
    size_ok = (left_n >= min_leaf) & (right_n >= min_leaf)
    if not size_ok.any():
        return None

    best_impurity, best = np.inf, None
    Y = targets[rows]
    for column in columns:
        x = X[rows, column]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        valid = size_ok & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        if criterion == "gini":
            ordered = Y[order]
            cum = np.cumsum(ordered, axis=0)[:-1]
            rest = ordered.sum(axis=0) - cum
            impurity = (left_n - (cum ** 2).sum(axis=1) / left_n) + (right_n - (rest ** 2).sum(axis=1) / right_n)
        else:
            ordered = Y[order]
            s = np.cumsum(ordered)[:-1]
            s2 = np.cumsum(ordered ** 2)[:-1]
            rest, rest2 = ordered.sum() - s, (ordered ** 2).sum() - s2
            impurity = (s2 - s ** 2 / left_n) + (rest2 - rest ** 2 / right_n)
        impurity = np.where(valid, np.round(impurity, 10), np.inf)
        i = int(np.argmin(impurity))
        if impurity[i] < best_impurity:
            threshold = 0.5 * (xs[i] + xs[i + 1])
            if threshold >= xs[i + 1]:
                threshold = xs[i]
            best_impurity, best = impurity[i], (int(column), float(threshold))
    return best


class _TreeBuilder:
    """Grows one tree depth-first; node ids follow creation order."""

    def __init__(
        self,
        X: np.ndarray,
        targets: np.ndarray,
        criterion: str,
        max_depth: Optional[int],
        min_leaf: int,
        mtry: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        self.X = X
        self.targets = targets
        self.criterion = criterion
        self.max_depth = max_depth
        self.min_leaf = max(1, int(min_leaf))
        self.n_features = X.shape[1]
        self.mtry = mtry if mtry is not None else self.n_features
        self.rng = rng
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[np.ndarray] = []

    def _is_pure(self, rows: np.ndarray) -> bool:
        block = self.targets[rows]
        if self.criterion == "gini":
            return np.count_nonzero(block.sum(axis=0)) <= 1
        return bool(np.ptp(block) == 0)

    def _columns(self) -> np.ndarray:
        if self.mtry >= self.n_features or self.rng is None:
            return np.arange(self.n_features)
        return np.sort(self.rng.choice(self.n_features, size=self.mtry, replace=False))

    def build(self, rows: np.ndarray, depth: int = 0) -> int:
        node = len(self.feature)
        block = self.targets[rows]
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(block.mean(axis=0) if self.criterion == "gini" else np.array([block.mean()]))

        if (self.max_depth is not None and depth >= self.max_depth) or self._is_pure(rows):
            return node
        split = _best_split(self.X, self.targets, rows, self._columns(), self.min_leaf, self.criterion)
        if split is None:
            return node

        column, threshold = split
        mask = self.X[rows, column] <= threshold
        self.feature[node] = column
        self.threshold[node] = threshold
        self.left[node] = self.build(rows[mask], depth + 1)
        self.right[node] = self.build(rows[~mask], depth + 1)
        return node

    def result(self) -> TreeStructure:
        return TreeStructure(
            feature=np.asarray(self.feature, dtype=int),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=int),
            right=np.asarray(self.right, dtype=int),
            value=np.vstack(self.value),
        )


def grow_tree(
    X: np.ndarray,
    targets: np.ndarray,
    criterion: str = "gini",
    max_depth: Optional[int] = None,
    min_leaf: int = 1,
    mtry: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    rows: Optional[np.ndarray] = None,
) -> TreeStructure:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("Tree fitting needs a nonempty 2-d feature table")
    if max_depth is not None and max_depth < 0:
        raise InvalidInputError(f"max_depth must be >= 0, got {max_depth}")
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows, dtype=int)
    builder = _TreeBuilder(X, np.asarray(targets, dtype=float), criterion, max_depth, min_leaf, mtry, rng)
    builder.build(rows)
    return builder.result()


def _validate_xy(X, y) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("Feature table must be a nonempty 2-d array")
    if y.shape[0] != X.shape[0]:
        raise InvalidInputError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    return X, y


def _argmax_classes(probs: np.ndarray, classes: np.ndarray) -> np.ndarray:
    return classes[np.argmax(probs, axis=1)]


# =============================================================================
# ESTIMATORS
# =============================================================================

class TreeClassifier(ClassifierMixin, BaseEstimator):
    """CART classification tree with Gini splits; leaves hold class frequencies."""

    def __init__(self, max_depth: Optional[int] = None, min_leaf: int = 1):
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    @classmethod
    def from_params(cls, params: TreeParams) -> "TreeClassifier":
        return cls(**asdict(params))

    def fit(self, X, y):
        X, y = _validate_xy(X, y)
        self.classes_ = np.unique(y)
        one_hot = (y[:, None] == self.classes_[None, :]).astype(float)
        self.tree_ = grow_tree(X, one_hot, "gini", self.max_depth, self.min_leaf)
        return self

    def predict_proba(self, X) -> np.ndarray:
        return self.tree_.predict_value(X)

    def predict(self, X) -> np.ndarray:
        return _argmax_classes(self.predict_proba(X), self.classes_)


class TreeRegressor(RegressorMixin, BaseEstimator):
    """CART regression tree with squared-error splits."""

    def __init__(self, max_depth: Optional[int] = None, min_leaf: int = 1):
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def fit(self, X, y):
        X, y = _validate_xy(X, np.asarray(y, dtype=float))
        self.tree_ = grow_tree(X, y, "squared_error", self.max_depth, self.min_leaf)
        return self

    def predict(self, X) -> np.ndarray:
        return self.tree_.predict_value(X)[:, 0]


class ForestClassifier(ClassifierMixin, BaseEstimator):
    """
    Random forest of Gini trees.

    Each tree gets its own child seed of `random_state`, draws a bootstrap
    sample of the rows and considers `mtry` random columns per split.
    Predictions average the leaf class frequencies.
    """

    def __init__(
        self,
        n_trees: int = 500,
        mtry: Optional[int] = None,
        min_leaf: int = 5,
        max_depth: Optional[int] = None,
        bootstrap: bool = True,
        random_state: int = 0,
        n_jobs: int = 1,
    ):
        self.n_trees = n_trees
        self.mtry = mtry
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    @classmethod
    def from_params(cls, params: ForestParams, random_state: int = 0, n_jobs: int = 1) -> "ForestClassifier":
        return cls(**asdict(params), random_state=random_state, n_jobs=n_jobs)

    def fit(self, X, y):
        X, y = _validate_xy(X, y)
        n, n_features = X.shape
        mtry = n_features if self.mtry is None else int(self.mtry)
        if not 1 <= mtry <= n_features:
            raise InvalidInputError(f"mtry must lie in [1, {n_features}], got {self.mtry}")
        if self.n_trees < 1:
            raise InvalidInputError(f"n_trees must be >= 1, got {self.n_trees}")

        self.classes_ = np.unique(y)
        self.n_features_in_ = n_features
        one_hot = (y[:, None] == self.classes_[None, :]).astype(float)
        children = np.random.SeedSequence(self.random_state).spawn(self.n_trees)

        def fit_one(seed: np.random.SeedSequence) -> Tuple[TreeStructure, np.ndarray]:
            rng = np.random.default_rng(seed)
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            tree = grow_tree(X, one_hot, "gini", self.max_depth, self.min_leaf, mtry, rng, rows=rows)
            return tree, rows

        fitted = Parallel(n_jobs=self.n_jobs, prefer="threads")(delayed(fit_one)(s) for s in children)
        self.trees_ = [tree for tree, _ in fitted]
        self.oob_score_ = self._oob_score(X, y, [rows for _, rows in fitted]) if self.bootstrap else None
        return self

    def _oob_score(self, X: np.ndarray, y: np.ndarray, samples: List[np.ndarray]) -> Optional[float]:
        n = X.shape[0]
        totals = np.zeros((n, self.classes_.size))
        votes = np.zeros(n)
        for tree, rows in zip(self.trees_, samples):
            out = np.ones(n, dtype=bool)
            out[rows] = False
            if out.any():
                totals[out] += tree.predict_value(X[out])
                votes[out] += 1
        covered = votes > 0
        if not covered.any():
            return None
        predicted = _argmax_classes(totals[covered], self.classes_)
        return float(np.mean(predicted == y[covered]))

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.mean([tree.predict_value(X) for tree in self.trees_], axis=0)

    def predict(self, X) -> np.ndarray:
        return _argmax_classes(self.predict_proba(X), self.classes_)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "classes": self.classes_.tolist(),
            "params": self.get_params(),
            "oob_score": self.oob_score_,
            "trees": [tree.to_dict() for tree in self.trees_],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ForestClassifier":
        model = cls(**data["params"])
        model.classes_ = np.asarray(data["classes"])
        model.oob_score_ = data.get("oob_score")
        model.trees_ = [TreeStructure.from_dict(t) for t in data["trees"]]
        model.n_features_in_ = None
        return model


def _sigmoid(f: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-f))


@dataclass
class _BinaryBooster:
    """Logistic boosting for one positive class."""

    init: float
    trees: List[TreeStructure]

    def decision(self, X: np.ndarray, shrinkage: float) -> np.ndarray:
        f = np.full(X.shape[0], self.init)
        for tree in self.trees:
            f += shrinkage * tree.predict_value(X)[:, 0]
        return f

    def to_dict(self) -> Dict[str, Any]:
        return {"init": self.init, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "_BinaryBooster":
        return cls(init=float(data["init"]), trees=[TreeStructure.from_dict(t) for t in data["trees"]])


def _fit_binary_booster(
    X: np.ndarray,
    positive: np.ndarray,
    n_trees: int,
    shrinkage: float,
    depth: int,
    min_leaf: int,
    subsample: float,
    rng: np.random.Generator,
) -> _BinaryBooster:
    n = X.shape[0]
    prior = float(np.clip(positive.mean(), _LOGIT_CLIP, 1 - _LOGIT_CLIP))
    booster = _BinaryBooster(init=float(np.log(prior / (1 - prior))), trees=[])
    f = np.full(n, booster.init)
    for _ in range(n_trees):
        p = _sigmoid(f)
        residual = positive - p
        if subsample < 1.0:
            rows = np.sort(rng.choice(n, size=max(1, int(round(subsample * n))), replace=False))
        else:
            rows = np.arange(n)
        tree = grow_tree(X, residual, "squared_error", depth, min_leaf, rows=rows)

        # One Newton step per leaf on the binomial deviance
        leaves = tree.apply(X[rows])
        for leaf in np.unique(leaves):
            members = rows[leaves == leaf]
            hessian = np.sum(p[members] * (1 - p[members]))
            tree.value[leaf, 0] = residual[members].sum() / hessian if hessian > _MIN_HESSIAN else 0.0

        f += shrinkage * tree.predict_value(X)[:, 0]
        booster.trees.append(tree)
    return booster


class BoostClassifier(ClassifierMixin, BaseEstimator):
    """
    Gradient boosting on the binomial deviance.

    Two classes are boosted natively (positive class = the larger label);
    more classes are boosted one-vs-rest and the per-class probabilities
    renormalized.
    """

    def __init__(
        self,
        n_trees: int = 100,
        shrinkage: float = 0.1,
        depth: int = 1,
        min_leaf: int = 5,
        subsample: float = 1.0,
        random_state: int = 0,
    ):
        self.n_trees = n_trees
        self.shrinkage = shrinkage
        self.depth = depth
        self.min_leaf = min_leaf
        self.subsample = subsample
        self.random_state = random_state

    @classmethod
    def from_params(cls, params: BoostParams, random_state: int = 0) -> "BoostClassifier":
        return cls(**asdict(params), random_state=random_state)

    def fit(self, X, y):
        X, y = _validate_xy(X, y)
        if self.n_trees < 0 or not 0 < self.subsample <= 1 or self.shrinkage <= 0:
            raise InvalidInputError("Invalid boosting parameters")
        self.classes_ = np.unique(y)
        self.n_features_in_ = X.shape[1]
        rng = np.random.default_rng(self.random_state)
        if self.classes_.size == 1:
            self.boosters_ = []
        elif self.classes_.size == 2:
            positive = (y == self.classes_[1]).astype(float)
            self.boosters_ = [_fit_binary_booster(
                X, positive, self.n_trees, self.shrinkage, self.depth, self.min_leaf, self.subsample, rng
            )]
        else:
            self.boosters_ = [
                _fit_binary_booster(
                    X, (y == c).astype(float), self.n_trees, self.shrinkage,
                    self.depth, self.min_leaf, self.subsample, rng,
                )
                for c in self.classes_
            ]
        return self

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.classes_.size == 1:
            return np.ones((X.shape[0], 1))
        scores = np.column_stack([_sigmoid(b.decision(X, self.shrinkage)) for b in self.boosters_])
        if self.classes_.size == 2:
            return np.column_stack([1 - scores[:, 0], scores[:, 0]])
        return scores / scores.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return _argmax_classes(self.predict_proba(X), self.classes_)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "classes": self.classes_.tolist(),
            "params": self.get_params(),
            "boosters": [b.to_dict() for b in self.boosters_],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BoostClassifier":
        model = cls(**data["params"])
        model.classes_ = np.asarray(data["classes"])
        model.boosters_ = [_BinaryBooster.from_dict(b) for b in data["boosters"]]
        model.n_features_in_ = None
        return model


# =============================================================================
# FUNCTIONAL ENTRY POINTS
# =============================================================================

def tree_fit(features, labels, max_depth: Optional[int] = None, min_leaf: int = 1) -> TreeClassifier:
    return TreeClassifier.from_params(TreeParams(max_depth=max_depth, min_leaf=min_leaf)).fit(features, labels)


def forest_fit(
    features,
    labels,
    n_trees: int,
    mtry: Optional[int],
    seed: int,
    min_leaf: int = 5,
    bootstrap: bool = True,
    n_jobs: int = 1,
) -> ForestClassifier:
    params = ForestParams(n_trees=n_trees, mtry=mtry, min_leaf=min_leaf, bootstrap=bootstrap)
    return ForestClassifier.from_params(params, random_state=seed, n_jobs=n_jobs).fit(features, labels)


def forest_predict(model: ForestClassifier, features) -> np.ndarray:
    return model.predict_proba(np.atleast_2d(features))


def boost_fit(
    features,
    labels,
    n_trees: int,
    shrinkage: float,
    interaction_depth: int,
    seed: int,
    min_leaf: int = 5,
    subsample: float = 1.0,
) -> BoostClassifier:
    params = BoostParams(
        n_trees=n_trees, shrinkage=shrinkage, depth=interaction_depth, min_leaf=min_leaf, subsample=subsample,
    )
    return BoostClassifier.from_params(params, random_state=seed).fit(features, labels)


def boost_predict(model: BoostClassifier, features) -> np.ndarray:
    return model.predict_proba(np.atleast_2d(features))
