"""
Semi-Metrics
============

Distance evaluators between preprocessed samples, grouped in five families:
- Lock-step: L^p and distance-correlation distances on normalized curves
- Elastic: dynamic time warping, discrete Frechet, Hausdorff
- svs: scalar/vector summaries of curves and mouse-movement measures
- Composition: Aitchison distance between AOI time compositions
- Symbol sequence: Levenshtein and Hamming distances between AOI sequences

A SemiMetricSpec names one distance (family, derivative order, parameters)
and pairwise_matrix materializes it over a whole dataset.
"""

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from numba import njit
from scipy.integrate import trapezoid
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import InvalidInputError
from .funcdata import (
    DERIVATIVE_ORDERS,
    MEASURE_ALIASES,
    AOIPartition,
    Composition,
    LabeledSample,
    MeasureVector,
    NormalizedCurve,
    SymbolSequence,
    aoi_composition,
    aoi_symbols,
)

logger = logging.getLogger(__name__)


class SemiMetricFamily(str, Enum):
    LOCK_STEP = "lock-step"
    ELASTIC = "elastic"
    SVS = "svs"
    COMPOSITION = "composition"
    SYMBOL_SEQUENCE = "symbol-sequence"


SUMMARIES = ("mean", "globMax", "globMin", "globRange")
ELASTIC_NAMES = ("dtw", "frechet", "hausdorff")

# Measure groups that expand to several components
MEASURE_GROUPS: Dict[str, Tuple[str, ...]] = {
    "flips2d": ("x_flips", "y_flips"),
}

_DIM_SUFFIXES = {"x": 0, "y": 1, "z": 2}
_LP_PATTERN = re.compile(r"^L(\d+(?:\.\d+)?)$")


@dataclass(frozen=True)
class SemiMetricSpec:
    """A named, parameterized distance definition."""

    name: str
    family: SemiMetricFamily
    order: int = 0
    p: float = 2.0
    summary: Optional[str] = None
    dim: Optional[int] = None
    measures: Tuple[str, ...] = ()
    raw: bool = False
    collapse_repeats: bool = False

    def __post_init__(self):
        if self.order not in DERIVATIVE_ORDERS:
            raise InvalidInputError(f"{self.name}: derivative order must be 0, 1 or 2, got {self.order}")
        if self.family in (SemiMetricFamily.COMPOSITION, SemiMetricFamily.SYMBOL_SEQUENCE) and self.order != 0:
            raise InvalidInputError(f"{self.name}: composition and symbol families require a=0")
        if self.is_measure_based and self.order != 0:
            raise InvalidInputError(f"{self.name}: measure-based distances require a=0")
        if self.raw and self.order != 0:
            raise InvalidInputError(f"{self.name}: raw-curve distances require a=0")
        if self.p < 1:
            raise InvalidInputError(f"{self.name}: p must be >= 1, got {self.p}")
        if self.dim is not None and self.dim < 0:
            raise InvalidInputError(f"{self.name}: dimension index must be >= 0")

    @property
    def is_measure_based(self) -> bool:
        return self.family == SemiMetricFamily.SVS and bool(self.measures)

    @property
    def label(self) -> str:
        """Display name, e.g. `globMax-x[a=1]`; order-free families show the bare name."""
        if self.family in (SemiMetricFamily.COMPOSITION, SemiMetricFamily.SYMBOL_SEQUENCE) or self.is_measure_based:
            return self.name
        return f"{self.name}[a={self.order}]"

    @classmethod
    def from_name(cls, name: str, order: int = 0, collapse_repeats: bool = False) -> "SemiMetricSpec":
        """
        Parse a roster name.

        Accepted forms: `L<p>`, `dcor`, `dtw`/`frechet`/`hausdorff` (optionally
        `-raw`), `mean`/`globMax`/`globMin`/`globRange` (optionally `-x`, `-y`
        or `-<index>`), `measure:<name>[,<name>...]`, `aitchison`,
        `levenshtein`, `hamming`.
        """
        lp = _LP_PATTERN.match(name)
        if lp:
            return cls(name=name, family=SemiMetricFamily.LOCK_STEP, order=order, p=float(lp.group(1)))
        if name == "dcor":
            return cls(name=name, family=SemiMetricFamily.LOCK_STEP, order=order)

        base, _, suffix = name.partition("-")
        if base in ELASTIC_NAMES:
            if suffix not in ("", "raw"):
                raise InvalidInputError(f"Unknown elastic variant: {name}")
            return cls(name=name, family=SemiMetricFamily.ELASTIC, order=order, raw=suffix == "raw")

        if base in SUMMARIES:
            dim = None
            if suffix:
                dim = _DIM_SUFFIXES.get(suffix)
                if dim is None:
                    if not suffix.isdigit():
                        raise InvalidInputError(f"Unknown dimension suffix in {name}")
                    dim = int(suffix)
            return cls(name=name, family=SemiMetricFamily.SVS, order=order, summary=base, dim=dim)

        if name.startswith("measure:"):
            measures: List[str] = []
            for part in name[len("measure:"):].split(","):
                part = part.strip()
                if not part:
                    raise InvalidInputError(f"Empty measure name in {name}")
                if part in MEASURE_GROUPS:
                    measures.extend(MEASURE_GROUPS[part])
                else:
                    measures.append(MEASURE_ALIASES.get(part, part))
            return cls(name=name, family=SemiMetricFamily.SVS, order=order, measures=tuple(measures))

        if name == "aitchison":
            return cls(name=name, family=SemiMetricFamily.COMPOSITION, order=order)
        if name == "levenshtein":
            return cls(name=name, family=SemiMetricFamily.SYMBOL_SEQUENCE, order=order,
                       collapse_repeats=collapse_repeats)
        if name == "hamming":
            return cls(name=name, family=SemiMetricFamily.SYMBOL_SEQUENCE, order=order)
        raise InvalidInputError(f"Unknown semi-metric: {name}")

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["family"] = self.family.value
        out["measures"] = list(self.measures)
        return out

    def fingerprint(self) -> str:
        document = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(document.encode("utf-8")).hexdigest()


@dataclass(eq=False)
class DistanceMatrix:
    """Pairwise distances of one spec over a dataset."""

    spec: SemiMetricSpec
    row_ids: Tuple[str, ...]
    col_ids: Tuple[str, ...]
    entries: np.ndarray

    def __post_init__(self):
        self.row_ids = tuple(self.row_ids)
        self.col_ids = tuple(self.col_ids)
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.shape != (len(self.row_ids), len(self.col_ids)):
            raise InvalidInputError(
                f"Distance matrix shape {self.entries.shape} does not match "
                f"{len(self.row_ids)}x{len(self.col_ids)} ids"
            )
        if np.any(self.entries < 0) or not np.all(np.isfinite(self.entries)):
            raise InvalidInputError(f"{self.spec.label}: distances must be finite and nonnegative")

    @property
    def is_square(self) -> bool:
        return self.row_ids == self.col_ids

    def index(self, ids: Sequence[str]) -> np.ndarray:
        lookup = {sid: i for i, sid in enumerate(self.row_ids)}
        return np.array([lookup[sid] for sid in ids], dtype=int)


# =============================================================================
# LOCK-STEP
# =============================================================================

def _check_same_grid(x: NormalizedCurve, y: NormalizedCurve) -> None:
    if x.values.shape != y.values.shape:
        raise InvalidInputError(f"Curves must share grid size and dimension: {x.values.shape} vs {y.values.shape}")


def lp_distance(x: NormalizedCurve, y: NormalizedCurve, p: float = 2.0) -> float:
    """(integral over [0,1] of sum_k |x_k - y_k|^p dt)^(1/p), trapezoidal rule."""
    if p < 1:
        raise InvalidInputError(f"p must be >= 1, got {p}")
    _check_same_grid(x, y)
    integrand = np.sum(np.abs(x.values - y.values) ** p, axis=1)
    return float(trapezoid(integrand, x.grid) ** (1.0 / p))


def _double_centered(values: np.ndarray) -> np.ndarray:
    distances = squareform(pdist(values))
    return (
        distances
        - distances.mean(axis=0)[None, :]
        - distances.mean(axis=1)[:, None]
        + distances.mean()
    )


def dcor_distance(x: NormalizedCurve, y: NormalizedCurve) -> float:
    """
    One minus the empirical distance correlation of the m paired grid values.

    A constant curve has zero distance variance; the distance is then 1.
    """
    _check_same_grid(x, y)
    a = _double_centered(x.values)
    b = _double_centered(y.values)
    v_xy = (a * b).mean()
    v_xx = (a * a).mean()
    v_yy = (b * b).mean()
    denominator = v_xx * v_yy
    if denominator <= 0:
        return 1.0
    r_squared = min(max(v_xy / np.sqrt(denominator), 0.0), 1.0)
    return float(1.0 - np.sqrt(r_squared))


# =============================================================================
# ELASTIC
# =============================================================================

def _point_sequence(x: Union[NormalizedCurve, np.ndarray, Any]) -> np.ndarray:
    values = np.asarray(getattr(x, "values", x), dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] == 0:
        raise InvalidInputError("Point sequence must not be empty")
    return values


def _ground_costs(x, y) -> np.ndarray:
    a, b = _point_sequence(x), _point_sequence(y)
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"Dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return cdist(a, b)


@njit(nogil=True)
def _dtw_cost(cost):
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return acc[n, m]


@njit(nogil=True)
def _frechet_cost(cost):
    n, m = cost.shape
    ret = np.empty((n, m))
    ret[0, 0] = cost[0, 0]
    for i in range(1, n):
        ret[i, 0] = max(ret[i - 1, 0], cost[i, 0])
    for j in range(1, m):
        ret[0, j] = max(ret[0, j - 1], cost[0, j])
    for i in range(1, n):
        for j in range(1, m):
            ret[i, j] = max(min(ret[i - 1, j], ret[i, j - 1], ret[i - 1, j - 1]), cost[i, j])
    return ret[n - 1, m - 1]


def dtw_distance(x, y) -> float:
    """Symmetric three-step DTW, Euclidean local cost, summed, unnormalized."""
    return float(_dtw_cost(_ground_costs(x, y)))


def frechet_distance(x, y) -> float:
    """Discrete Frechet distance with Euclidean ground distance."""
    return float(_frechet_cost(_ground_costs(x, y)))


def hausdorff_distance(x, y) -> float:
    """Symmetric Hausdorff distance between the point sets (order ignored)."""
    cost = _ground_costs(x, y)
    return float(max(cost.min(axis=1).max(), cost.min(axis=0).max()))


# =============================================================================
# SVS
# =============================================================================

def _summary(x: NormalizedCurve, summary: str) -> np.ndarray:
    values = x.values
    if summary == "mean":
        return trapezoid(values, x.grid, axis=0)
    if summary == "globMax":
        return values.max(axis=0)
    if summary == "globMin":
        return values.min(axis=0)
    if summary == "globRange":
        return values.max(axis=0) - values.min(axis=0)
    raise InvalidInputError(f"Unknown summary functional: {summary}")


def svs_scalar_distance(x: NormalizedCurve, y: NormalizedCurve, summary: str, dim: int) -> float:
    """|T(x) - T(y)| for the summary of one dimension."""
    if not (0 <= dim < x.d and dim < y.d):
        raise InvalidInputError(f"Dimension index {dim} out of range for d={min(x.d, y.d)}")
    return float(abs(_summary(x, summary)[dim] - _summary(y, summary)[dim]))


def svs_vector_distance(x: NormalizedCurve, y: NormalizedCurve, summary: str) -> float:
    """Euclidean distance between per-dimension summary vectors."""
    if x.d != y.d:
        raise InvalidInputError(f"Dimension mismatch: {x.d} vs {y.d}")
    return float(np.linalg.norm(_summary(x, summary) - _summary(y, summary)))


def measure_distance(a: MeasureVector, b: MeasureVector, names: Sequence[str]) -> float:
    """Euclidean distance over the named measure components."""
    if not names:
        raise InvalidInputError("measure_distance needs at least one measure name")
    diffs = np.array([a.value(n) - b.value(n) for n in names])
    return float(np.linalg.norm(diffs))


# =============================================================================
# COMPOSITIONS AND SYMBOL SEQUENCES
# =============================================================================

def aitchison_distance(c: Composition, c_star: Composition) -> float:
    """sqrt(1/(2m) sum_j sum_s (ln(c_j/c_s) - ln(c*_j/c*_s))^2)."""
    if c.m != c_star.m:
        raise InvalidInputError(f"Composition part counts differ: {c.m} vs {c_star.m}")
    log_c, log_star = np.log(c.parts), np.log(c_star.parts)
    diff = (log_c[:, None] - log_c[None, :]) - (log_star[:, None] - log_star[None, :])
    return float(np.sqrt(np.sum(diff ** 2) / (2 * c.m)))


@njit(nogil=True)
def _edit_distance(a, b):
    n, m = a.shape[0], b.shape[0]
    previous = np.arange(m + 1)
    current = np.empty(m + 1, dtype=previous.dtype)
    for i in range(1, n + 1):
        current[0] = i
        for j in range(1, m + 1):
            substitution = previous[j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
            current[j] = min(previous[j] + 1, current[j - 1] + 1, substitution)
        previous, current = current, previous
    return previous[m]


def _codes(s: Union[SymbolSequence, str]) -> np.ndarray:
    symbols = s.symbols if isinstance(s, SymbolSequence) else s
    return np.array([ord(ch) for ch in symbols], dtype=np.int64)


def collapse_repeats(s: SymbolSequence) -> SymbolSequence:
    """Drop consecutive duplicate symbols ("AAABBA" -> "ABA")."""
    symbols = s.symbols
    kept = [ch for i, ch in enumerate(symbols) if i == 0 or ch != symbols[i - 1]]
    return SymbolSequence("".join(kept))


def levenshtein_distance(s: Union[SymbolSequence, str], s_star: Union[SymbolSequence, str]) -> float:
    """Unit-cost edit distance."""
    return float(_edit_distance(_codes(s), _codes(s_star)))


def hamming_distance(s: Union[SymbolSequence, str], s_star: Union[SymbolSequence, str]) -> float:
    """Number of positions with differing symbols; lengths must match."""
    a, b = _codes(s), _codes(s_star)
    if a.shape != b.shape:
        raise InvalidInputError(f"Hamming distance needs equal lengths, got {a.size} and {b.size}")
    return float(np.count_nonzero(a != b))


# =============================================================================
# DISPATCH
# =============================================================================

@dataclass
class EncodingContext:
    """Dataset-level inputs some families need besides the samples."""

    partition: Optional[AOIPartition] = None
    include_fallback: Optional[bool] = None


def dataset_includes_fallback(samples: Sequence[LabeledSample], partition: AOIPartition) -> bool:
    """True when any normalized curve of the dataset leaves every AOI."""
    return any(
        partition.fallback in aoi_symbols(s.normalized[0], partition).symbols for s in samples
    )


def encode(sample: LabeledSample, spec: SemiMetricSpec, context: Optional[EncodingContext] = None) -> Any:
    """The representation of a sample the SemiMetricSpec's evaluator consumes."""
    context = context or EncodingContext()
    family = spec.family
    if family in (SemiMetricFamily.COMPOSITION, SemiMetricFamily.SYMBOL_SEQUENCE):
        if context.partition is None:
            raise InvalidInputError(f"{spec.label} needs an AOI partition")
        if family == SemiMetricFamily.COMPOSITION:
            return aoi_composition(sample.normalized[0], context.partition, context.include_fallback)
        if spec.name == "hamming":
            return aoi_symbols(sample.normalized[0], context.partition)
        sequence = aoi_symbols(sample.curve, context.partition)
        return collapse_repeats(sequence) if spec.collapse_repeats else sequence
    if spec.is_measure_based:
        return sample.measures
    if spec.raw:
        return sample.curve.values
    return sample.normalized[spec.order]


def evaluate(spec: SemiMetricSpec, a: Any, b: Any) -> float:
    """Distance between two encoded samples."""
    family = spec.family
    if family == SemiMetricFamily.LOCK_STEP:
        return dcor_distance(a, b) if spec.name == "dcor" else lp_distance(a, b, spec.p)
    if family == SemiMetricFamily.ELASTIC:
        base = spec.name.partition("-")[0]
        if base == "dtw":
            return dtw_distance(a, b)
        if base == "frechet":
            return frechet_distance(a, b)
        return hausdorff_distance(a, b)
    if family == SemiMetricFamily.SVS:
        if spec.is_measure_based:
            return measure_distance(a, b, spec.measures)
        if spec.dim is None:
            return svs_vector_distance(a, b, spec.summary)
        return svs_scalar_distance(a, b, spec.summary, spec.dim)
    if family == SemiMetricFamily.COMPOSITION:
        return aitchison_distance(a, b)
    if spec.name == "hamming":
        return hamming_distance(a, b)
    return levenshtein_distance(a, b)


def distance(
    spec: SemiMetricSpec,
    a: LabeledSample,
    b: LabeledSample,
    context: Optional[EncodingContext] = None,
) -> float:
    """Evaluate a spec directly on two samples."""
    return evaluate(spec, encode(a, spec, context), encode(b, spec, context))


def pairwise_matrix(
    samples: Sequence[LabeledSample],
    spec: SemiMetricSpec,
    partition: Optional[AOIPartition] = None,
    n_jobs: int = 1,
) -> DistanceMatrix:
    """
    Full symmetric distance matrix of spec over samples.

    Rows are computed in parallel and assembled in submission order, so the
    result does not depend on n_jobs.
    """
    ids = [s.id for s in samples]
    context = EncodingContext(partition=partition)
    if spec.family == SemiMetricFamily.COMPOSITION and partition is not None:
        context.include_fallback = dataset_includes_fallback(samples, partition)

    encoded = []
    for sample in samples:
        try:
            encoded.append(encode(sample, spec, context))
        except InvalidInputError as e:
            raise InvalidInputError(f"{spec.label}: sample {sample.id}: {e}") from e

    n = len(samples)

    def upper_row(i: int) -> np.ndarray:
        row = np.zeros(n - i - 1)
        for offset, j in enumerate(range(i + 1, n)):
            try:
                row[offset] = evaluate(spec, encoded[i], encoded[j])
            except InvalidInputError as e:
                raise InvalidInputError(f"{spec.label}: pair ({ids[i]}, {ids[j]}): {e}") from e
        return row

    rows = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(upper_row)(i) for i in range(n))

    entries = np.zeros((n, n))
    for i, row in enumerate(rows):
        entries[i, i + 1:] = row
    entries += entries.T

    logger.debug(f"Computed {spec.label} over {n} samples")
    return DistanceMatrix(spec=spec, row_ids=tuple(ids), col_ids=tuple(ids), entries=entries)
