"""
Weak Learners
=============

Class-probability estimates from precomputed distances:
- fkNN: class frequencies among the k nearest training curves, where
  distance ties at the k-th neighbour enlarge the neighbourhood
- kNCD: kernel-weighted class frequencies over all training curves

Tuning picks k or h by mean validation accuracy over shared splits.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .errors import InvalidInputError, KernelFallbackWarning
from .semimetrics import SemiMetricSpec
from .seeding import derive_rng

logger = logging.getLogger(__name__)

MAX_DEFAULT_K = 31
H_QUANTILES = tuple(np.round(np.arange(1, 20) * 0.05, 2))

# (train indices, validation indices) into a distance matrix
Split = Tuple[np.ndarray, np.ndarray]


class LearnerBase(str, Enum):
    FKNN = "fkNN"
    KNCD = "kNCD"


class Kernel(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class WeakLearnerSpec:
    """A weak learner: base rule, semi-metric and (once tuned) its parameter."""

    base: LearnerBase
    semimetric: SemiMetricSpec
    param: Optional[float] = None
    kernel: Kernel = Kernel.GAUSSIAN

    def __post_init__(self):
        if self.param is None:
            return
        if self.base == LearnerBase.FKNN:
            if int(self.param) != self.param or self.param < 1:
                raise InvalidInputError(f"{self.name}: k must be a positive integer, got {self.param}")
            object.__setattr__(self, "param", int(self.param))
        elif not self.param > 0:
            raise InvalidInputError(f"{self.name}: bandwidth h must be > 0, got {self.param}")

    @property
    def name(self) -> str:
        return f"{self.base.value}:{self.semimetric.label}"

    def with_param(self, value: float) -> "WeakLearnerSpec":
        return replace(self, param=value)

    def to_dict(self) -> Dict:
        return {
            "base": self.base.value,
            "semimetric": self.semimetric.to_dict(),
            "param": self.param,
            "kernel": self.kernel.value,
        }


@dataclass(eq=False)
class ProbMatrix:
    """Rows = observations, columns = classes."""

    probs: np.ndarray
    classes: Tuple[int, ...]

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.classes = tuple(int(c) for c in self.classes)
        if self.probs.ndim != 2 or self.probs.shape[1] != len(self.classes):
            raise InvalidInputError(f"ProbMatrix shape {self.probs.shape} does not match {len(self.classes)} classes")
        if np.any(self.probs < -1e-12) or np.any(self.probs > 1 + 1e-12):
            raise InvalidInputError("Probabilities must lie in [0, 1]")
        if self.probs.size and np.max(np.abs(self.probs.sum(axis=1) - 1.0)) > 1e-9:
            raise InvalidInputError("Probability rows must sum to 1")


def _one_hot(labels: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    return (np.asarray(labels)[:, None] == np.asarray(classes)[None, :]).astype(float)


def _resolve_classes(labels: np.ndarray, classes: Optional[Sequence[int]]) -> np.ndarray:
    return np.unique(labels) if classes is None else np.asarray(classes)


# =============================================================================
# fkNN
# =============================================================================

def fknn_proba_matrix(
    dists: np.ndarray,
    train_labels: Sequence[int],
    k: int,
    classes: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    fkNN probabilities for a block of test rows (n_test x n_train distances).

    The neighbourhood holds every training point within the k-th smallest
    distance, and votes are normalized by its size.
    """
    dists = np.atleast_2d(np.asarray(dists, dtype=float))
    labels = np.asarray(train_labels)
    n_train = dists.shape[1]
    if not 1 <= k <= n_train:
        raise InvalidInputError(f"k must lie in [1, {n_train}], got {k}")
    classes = _resolve_classes(labels, classes)
    kth = np.partition(dists, k - 1, axis=1)[:, k - 1]
    neighbourhood = (dists <= kth[:, None]).astype(float)
    counts = neighbourhood @ _one_hot(labels, classes)
    return counts / counts.sum(axis=1, keepdims=True)


def fknn_proba(
    train_dists: Sequence[float],
    train_labels: Sequence[int],
    k: int,
    classes: Optional[Sequence[int]] = None,
) -> np.ndarray:
    return fknn_proba_matrix(np.asarray(train_dists, dtype=float)[None, :], train_labels, k, classes)[0]


def fknn_predict(
    prob: Sequence[float],
    rng: np.random.Generator,
    classes: Optional[Sequence[int]] = None,
) -> int:
    """Argmax class; exact ties are drawn from rng."""
    prob = np.asarray(prob, dtype=float)
    classes = np.arange(1, prob.size + 1) if classes is None else np.asarray(classes)
    winners = np.flatnonzero(prob == prob.max())
    if winners.size > 1:
        return int(classes[rng.choice(winners)])
    return int(classes[winners[0]])


def predict_classes(
    probs: np.ndarray,
    classes: Sequence[int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Row-wise fknn_predict."""
    return np.array([fknn_predict(row, rng, classes) for row in np.atleast_2d(probs)], dtype=int)


# =============================================================================
# kNCD
# =============================================================================

def kncd_proba_matrix(
    dists: np.ndarray,
    train_labels: Sequence[int],
    h: float,
    kernel: Kernel = Kernel.GAUSSIAN,
    classes: Optional[Sequence[int]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    kNCD probabilities for a block of test rows.

    Returns (probs, fallback) where fallback flags rows whose kernel mass was
    zero; those rows carry 1-NN probabilities instead.
    """
    if not h > 0:
        raise InvalidInputError(f"Bandwidth h must be > 0, got {h}")
    dists = np.atleast_2d(np.asarray(dists, dtype=float))
    labels = np.asarray(train_labels)
    classes = _resolve_classes(labels, classes)

    if Kernel(kernel) == Kernel.GAUSSIAN:
        weights = np.exp(-0.5 * (dists / h) ** 2)
    else:
        # u = D/h <= 1, compared on distances directly
        weights = (dists <= h).astype(float)

    mass = weights.sum(axis=1)
    fallback = mass <= 0
    probs = np.empty((dists.shape[0], classes.size))
    ok = ~fallback
    probs[ok] = (weights[ok] @ _one_hot(labels, classes)) / mass[ok, None]
    if fallback.any():
        probs[fallback] = fknn_proba_matrix(dists[fallback], labels, 1, classes)
        warnings.warn(
            f"Zero kernel mass for {int(fallback.sum())} row(s) at h={h}; used nearest neighbours",
            KernelFallbackWarning,
            stacklevel=2,
        )
    return probs, fallback


def kncd_proba(
    train_dists: Sequence[float],
    train_labels: Sequence[int],
    h: float,
    kernel: Kernel = Kernel.GAUSSIAN,
    classes: Optional[Sequence[int]] = None,
    return_fallback: bool = False,
):
    probs, fallback = kncd_proba_matrix(
        np.asarray(train_dists, dtype=float)[None, :], train_labels, h, kernel, classes
    )
    if return_fallback:
        return probs[0], bool(fallback[0])
    return probs[0]


def predict_proba(
    spec: WeakLearnerSpec,
    dists: np.ndarray,
    train_labels: Sequence[int],
    classes: Sequence[int],
) -> Tuple[np.ndarray, int]:
    """Probabilities of a tuned learner and the number of kernel fallbacks."""
    if spec.param is None:
        raise InvalidInputError(f"{spec.name} has not been tuned")
    if spec.base == LearnerBase.FKNN:
        return fknn_proba_matrix(dists, train_labels, int(spec.param), classes), 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelFallbackWarning)
        probs, fallback = kncd_proba_matrix(dists, train_labels, float(spec.param), spec.kernel, classes)
    return probs, int(fallback.sum())


# =============================================================================
# TUNING
# =============================================================================

def default_k_grid(n_train: int) -> List[int]:
    """Odd k up to min(31, n_train)."""
    return list(range(1, min(MAX_DEFAULT_K, n_train) + 1, 2))


def default_h_grid(train_dists: np.ndarray) -> List[float]:
    """Quantiles 0.05..0.95 of the positive pairwise training distances."""
    block = np.asarray(train_dists, dtype=float)
    if block.ndim == 2 and block.shape[0] == block.shape[1]:
        block = block[np.triu_indices(block.shape[0], k=1)]
    positive = block[block > 0]
    if positive.size == 0:
        return [1.0]
    return sorted(set(float(q) for q in np.quantile(positive, H_QUANTILES)))


@dataclass
class TuneResult:
    """Outcome of tuning one weak learner on one set of splits."""

    spec: WeakLearnerSpec
    accuracy: float
    grid_scores: Dict[float, float] = field(default_factory=dict)
    # Out-of-fold probabilities of the chosen parameter, aligned with `rows`
    oof_probs: Optional[np.ndarray] = None
    rows: Optional[np.ndarray] = None
    fallbacks: int = 0


def _split_accuracy(
    spec: WeakLearnerSpec,
    entries: np.ndarray,
    labels: np.ndarray,
    classes: np.ndarray,
    split: Split,
    rng: np.random.Generator,
) -> Tuple[float, np.ndarray, int]:
    train, val = split
    probs, fallbacks = predict_proba(spec, entries[np.ix_(val, train)], labels[train], classes)
    predicted = predict_classes(probs, classes, rng)
    return float(np.mean(predicted == labels[val])), probs, fallbacks


def tune_param(
    splits: Sequence[Split],
    spec: WeakLearnerSpec,
    entries: np.ndarray,
    labels: Sequence[int],
    param_grid: Optional[Sequence[float]] = None,
    classes: Optional[Sequence[int]] = None,
    seed: int = 0,
    fold: int = 0,
    n_jobs: int = 1,
) -> TuneResult:
    """
    Pick the grid value with the highest mean validation accuracy.

    Ties go to the smoother model: smaller k for fkNN, larger h for kNCD.
    entries is the full distance matrix; splits index into it. When the
    validation sets partition some row set, their out-of-fold probabilities
    for the winner are returned as well.
    """
    labels = np.asarray(labels)
    classes = _resolve_classes(labels, classes)
    if param_grid is None:
        rows = np.unique(np.concatenate([np.concatenate(s) for s in splits]))
        if spec.base == LearnerBase.FKNN:
            param_grid = default_k_grid(min(len(s[0]) for s in splits))
        else:
            param_grid = default_h_grid(entries[np.ix_(rows, rows)])
    param_grid = list(param_grid)
    if not param_grid:
        raise InvalidInputError(f"{spec.name}: empty parameter grid")
    if not splits:
        raise InvalidInputError(f"{spec.name}: no tuning splits")

    def score(g: int) -> Tuple[float, List[np.ndarray], int]:
        candidate = spec.with_param(param_grid[g])
        accuracies, probs, fallbacks = [], [], 0
        for s, split in enumerate(splits):
            rng = derive_rng(seed, spec.name, fold, g, s)
            acc, p, fb = _split_accuracy(candidate, entries, labels, classes, split, rng)
            accuracies.append(acc)
            probs.append(p)
            fallbacks += fb
        return float(np.mean(accuracies)), probs, fallbacks

    results = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(score)(g) for g in range(len(param_grid)))

    smoother_first = sorted(
        range(len(param_grid)),
        key=lambda g: param_grid[g] if spec.base == LearnerBase.FKNN else -param_grid[g],
    )
    best = max(smoother_first, key=lambda g: results[g][0])
    best_accuracy, best_probs, fallbacks = results[best]

    val_rows = np.concatenate([s[1] for s in splits])
    oof, rows = None, None
    if np.unique(val_rows).size == val_rows.size:
        order = np.argsort(val_rows, kind="stable")
        rows = val_rows[order]
        oof = np.vstack(best_probs)[order]

    return TuneResult(
        spec=spec.with_param(param_grid[best]),
        accuracy=best_accuracy,
        grid_scores={float(param_grid[g]): results[g][0] for g in range(len(param_grid))},
        oof_probs=oof,
        rows=rows,
        fallbacks=fallbacks,
    )
