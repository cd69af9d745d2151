"""
Functional Data
===============

Raw and preprocessed multivariate functional observations and the
secondary encodings derived from them:
- Standardization of screen coordinates (viewport or min-max)
- Finite-difference derivatives on the raw, irregular time grid
- Time normalization onto an equidistant grid over [0, 1]
- Mouse-movement measures (time, distance, derivative, hover, flip types)
- Area-of-interest (AOI) symbol sequences and time compositions
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 101
DERIVATIVE_ORDERS = (0, 1, 2)

# Short names accepted wherever a measure is referenced by name.
MEASURE_ALIASES: Dict[str, str] = {
    "RT": "response_time",
    "initiation": "initiation_time",
    "distance": "total_distance",
    "velocity": "max_velocity",
    "acceleration": "max_acceleration",
    "hovertime": "hover_time",
    "xflips": "x_flips",
    "yflips": "y_flips",
}

MEASURE_NAMES: Tuple[str, ...] = (
    "response_time",
    "initiation_time",
    "total_distance",
    "max_velocity",
    "max_acceleration",
    "hovers",
    "hover_time",
    "x_flips",
    "y_flips",
    "length",
)

_COUNT_MEASURES = ("hovers", "x_flips", "y_flips", "length")
_TIME_MEASURES = ("response_time", "initiation_time", "hover_time")


@dataclass(frozen=True, eq=False)
class Curve:
    """A d-variate function sampled on a strictly increasing time grid (ms)."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if grid.ndim != 1 or grid.shape[0] < 2:
            raise InvalidInputError(f"Curve needs at least 2 grid points, got shape {grid.shape}")
        if values.ndim != 2 or values.shape[0] != grid.shape[0]:
            raise InvalidInputError(
                f"Curve values must have {grid.shape[0]} rows, got shape {values.shape}"
            )
        if not (np.all(np.isfinite(grid)) and np.all(np.isfinite(values))):
            raise InvalidInputError("Curve grid and values must be finite")
        if np.any(np.diff(grid) <= 0):
            raise InvalidInputError("Curve grid must be strictly increasing (duplicate timestamps?)")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n_points(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class NormalizedCurve:
    """Values on the implicit equidistant grid {0, 1/(m-1), ..., 1}."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 2:
            raise InvalidInputError(f"NormalizedCurve needs m >= 2 rows, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("NormalizedCurve values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m)


@dataclass
class MeasureVector:
    """Mouse-movement measures of one trajectory, plus externally supplied variants."""

    response_time: float = 0.0
    initiation_time: float = 0.0
    total_distance: float = 0.0
    max_velocity: float = 0.0
    max_acceleration: float = 0.0
    hovers: int = 0
    hover_time: float = 0.0
    x_flips: int = 0
    y_flips: int = 0
    length: int = 0

    # Personalized or otherwise external measures, keyed by their CSV name
    personalized: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in _COUNT_MEASURES:
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise InvalidInputError(f"Measure {name} must be a nonnegative integer, got {value}")
            setattr(self, name, int(value))
        for name in _TIME_MEASURES:
            if getattr(self, name) < 0:
                raise InvalidInputError(f"Measure {name} must be nonnegative")

    def value(self, name: str) -> float:
        """Look up a measure by field name, alias or external name."""
        resolved = MEASURE_ALIASES.get(name, name)
        if resolved in MEASURE_NAMES:
            return float(getattr(self, resolved))
        if name in self.personalized:
            return float(self.personalized[name])
        raise InvalidInputError(f"Unknown measure: {name}")

    def has(self, name: str) -> bool:
        return MEASURE_ALIASES.get(name, name) in MEASURE_NAMES or name in self.personalized

    def as_dict(self) -> Dict[str, float]:
        out = {name: getattr(self, name) for name in MEASURE_NAMES}
        out.update({name: self.personalized[name] for name in sorted(self.personalized)})
        return out


@dataclass
class LabeledSample:
    """One learning observation after preprocessing."""

    id: str
    curve: Curve  # standardized raw trajectory
    normalized: Dict[int, NormalizedCurve]
    measures: MeasureVector
    label: int
    question: str = ""

    def __post_init__(self):
        missing = [a for a in DERIVATIVE_ORDERS if a not in self.normalized]
        if missing:
            raise InvalidInputError(f"Sample {self.id} lacks normalized curves for orders {missing}")


@dataclass(frozen=True)
class AOIBox:
    """Axis-aligned area of interest in standardized coordinates."""

    symbol: str
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if len(self.symbol) != 1:
            raise InvalidInputError(f"AOI symbol must be a single character, got {self.symbol!r}")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise InvalidInputError(f"AOI {self.symbol!r} must have positive area")

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


@dataclass(frozen=True)
class AOIPartition:
    """Ordered AOI boxes (first match wins) and the symbol for points in none."""

    boxes: Tuple[AOIBox, ...]
    fallback: str = "_"

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        symbols = [b.symbol for b in self.boxes]
        if len(set(symbols)) != len(symbols):
            raise InvalidInputError(f"AOI symbols must be distinct: {symbols}")
        if len(self.fallback) != 1 or self.fallback in symbols:
            raise InvalidInputError(f"Fallback symbol {self.fallback!r} must be one new character")

    @property
    def alphabet(self) -> str:
        return "".join(b.symbol for b in self.boxes) + self.fallback

    @classmethod
    def from_json(cls, document: Union[dict, list]) -> "AOIPartition":
        """Build from `[{symbol, x0, y0, x1, y1}, ...]` or `{"aois": [...], "fallback": c}`."""
        if isinstance(document, list):
            entries, fallback = document, "_"
        else:
            entries, fallback = document.get("aois", []), document.get("fallback", "_")
        try:
            boxes = tuple(
                AOIBox(str(e["symbol"]), float(e["x0"]), float(e["y0"]), float(e["x1"]), float(e["y1"]))
                for e in entries
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidInputError(f"Malformed AOI entry: {e}") from e
        return cls(boxes=boxes, fallback=str(fallback))

    def to_json(self) -> dict:
        return {
            "aois": [
                {"symbol": b.symbol, "x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1}
                for b in self.boxes
            ],
            "fallback": self.fallback,
        }


@dataclass(frozen=True)
class SymbolSequence:
    symbols: str

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True, eq=False)
class Composition:
    """Strictly positive parts summing to one."""

    parts: np.ndarray

    def __post_init__(self):
        parts = np.asarray(self.parts, dtype=float)
        if parts.ndim != 1 or parts.size == 0:
            raise InvalidInputError("Composition needs a nonempty 1-d part vector")
        if np.any(parts <= 0) or not np.all(np.isfinite(parts)):
            raise InvalidInputError("Composition parts must be finite and > 0")
        if abs(parts.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"Composition parts must sum to 1, got {parts.sum()!r}")
        object.__setattr__(self, "parts", parts)

    @property
    def m(self) -> int:
        return self.parts.size


# =============================================================================
# PREPROCESSING
# =============================================================================

def standardize(curve: Curve, viewport: Tuple[float, float]) -> Curve:
    """Divide x by the viewport width and y by its height; other dimensions untouched."""
    width, height = (float(v) for v in viewport)
    if not (np.isfinite(width) and np.isfinite(height)) or width <= 0 or height <= 0:
        raise InvalidInputError(f"Viewport must be positive, got {width}x{height}")
    scale = np.ones(curve.d)
    scale[0] = width
    if curve.d > 1:
        scale[1] = height
    return Curve(curve.grid, curve.values / scale)


def standardize_minmax(curves: Sequence[Curve]) -> List[Curve]:
    """
    Min-max scale every dimension to [0, 1] over a group of curves.

    Used for a question whose trajectories carry no viewport. A dimension
    without spread is only shifted.
    """
    if not curves:
        return []
    stacked = np.vstack([c.values for c in curves])
    low = stacked.min(axis=0)
    spread = stacked.max(axis=0) - low
    spread[spread == 0] = 1.0
    return [Curve(c.grid, (c.values - low) / spread) for c in curves]


def _central_difference(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (grid[2:] - grid[:-2])[:, None]
    out[0] = (values[1] - values[0]) / (grid[1] - grid[0])
    out[-1] = (values[-1] - values[-2]) / (grid[-1] - grid[-2])
    return out


def finite_derivative(curve: Curve, order: int) -> Curve:
    """
    Derivative of order 1 or 2 on the curve's own (possibly irregular) grid.

    Interior points use (x[j+1] - x[j-1]) / (t[j+1] - t[j-1]), endpoints the
    one-sided difference; order 2 applies the scheme twice.
    """
    if order not in (1, 2):
        raise InvalidInputError(f"Derivative order must be 1 or 2, got {order}")
    required = 3 if order == 1 else 5
    if curve.n_points < required:
        raise InvalidInputError(
            f"Order-{order} derivative needs at least {required} points, got {curve.n_points}"
        )
    values = curve.values
    for _ in range(order):
        values = _central_difference(curve.grid, values)
    return Curve(curve.grid, values)


def time_normalize(curve: Curve, m: int = DEFAULT_GRID_SIZE) -> NormalizedCurve:
    """Rescale time to [0, 1] and linearly interpolate each dimension at m equidistant points."""
    if m < 2:
        raise InvalidInputError(f"Grid size must be >= 2, got {m}")
    t = (curve.grid - curve.grid[0]) / (curve.grid[-1] - curve.grid[0])
    queries = np.linspace(0.0, 1.0, m)
    values = np.column_stack([np.interp(queries, t, curve.values[:, k]) for k in range(curve.d)])
    return NormalizedCurve(values)


def as_curve(normalized: NormalizedCurve) -> Curve:
    """View a normalized curve as a Curve on its [0, 1] grid."""
    return Curve(normalized.grid, normalized.values)


def normalized_derivatives(
    curve: Curve,
    m: int = DEFAULT_GRID_SIZE,
    normalize_first: bool = False,
) -> Dict[int, NormalizedCurve]:
    """
    Normalized curves for derivative orders 0, 1 and 2.

    By default derivatives are taken on the raw grid and then normalized;
    with normalize_first the order-0 curve is normalized and differentiated
    on the equidistant grid.
    """
    if normalize_first:
        base = as_curve(time_normalize(curve, m))
        return {
            0: NormalizedCurve(base.values),
            1: NormalizedCurve(finite_derivative(base, 1).values),
            2: NormalizedCurve(finite_derivative(base, 2).values),
        }
    return {
        0: time_normalize(curve, m),
        1: time_normalize(finite_derivative(curve, 1), m),
        2: time_normalize(finite_derivative(curve, 2), m),
    }


# =============================================================================
# MEASURES
# =============================================================================

def _count_flips(deltas: np.ndarray, threshold: float) -> int:
    kept = deltas[np.abs(deltas) > threshold]
    if kept.size < 2:
        return 0
    signs = np.sign(kept)
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def _idle_runs(grid: np.ndarray, moving: np.ndarray) -> np.ndarray:
    """Durations of maximal runs of zero-displacement steps."""
    idle = np.concatenate([[0], (~moving).astype(int), [0]])
    edges = np.diff(idle)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    # Steps starts..ends-1 span points starts..ends
    return grid[ends] - grid[starts]


def extract_measures(
    curve: Curve,
    hover_threshold: float = 1000.0,
    flip_threshold: float = 0.0,
) -> MeasureVector:
    """
    The ten mouse-movement measures of a raw (unstandardized) trajectory.

    Velocity needs T >= 3 and acceleration T >= 5 for the central-difference
    scheme; shorter curves fall back to the single-step velocity and zero
    acceleration.
    """
    grid, values = curve.grid, curve.values
    steps = np.diff(values, axis=0)
    step_lengths = np.linalg.norm(steps, axis=1)
    moving = step_lengths > 0

    response_time = float(grid[-1] - grid[0])
    if moving.any():
        initiation_time = float(grid[int(np.argmax(moving))] - grid[0])
    else:
        initiation_time = response_time

    if curve.n_points >= 3:
        max_velocity = float(np.linalg.norm(finite_derivative(curve, 1).values, axis=1).max())
    else:
        max_velocity = float(step_lengths[0] / (grid[1] - grid[0]))
    if curve.n_points >= 5:
        max_acceleration = float(np.linalg.norm(finite_derivative(curve, 2).values, axis=1).max())
    else:
        max_acceleration = 0.0

    runs = _idle_runs(grid, moving)
    hover_runs = runs[runs >= hover_threshold]

    return MeasureVector(
        response_time=response_time,
        initiation_time=initiation_time,
        total_distance=float(step_lengths.sum()),
        max_velocity=max_velocity,
        max_acceleration=max_acceleration,
        hovers=int(hover_runs.size),
        hover_time=float(hover_runs.sum()),
        x_flips=_count_flips(steps[:, 0], flip_threshold),
        y_flips=_count_flips(steps[:, 1], flip_threshold) if curve.d > 1 else 0,
        length=curve.n_points,
    )


# =============================================================================
# AREAS OF INTEREST
# =============================================================================

def aoi_symbols(
    curve: Union[Curve, NormalizedCurve],
    partition: AOIPartition,
) -> SymbolSequence:
    """One symbol per sample point; the first containing box wins."""
    values = curve.values
    if values.shape[1] < 2:
        raise InvalidInputError("AOI symbols need at least two coordinates")
    x, y = values[:, 0], values[:, 1]
    symbols = np.full(values.shape[0], partition.fallback, dtype="<U1")
    assigned = np.zeros(values.shape[0], dtype=bool)
    for box in partition.boxes:
        hit = box.contains(x, y) & ~assigned
        symbols[hit] = box.symbol
        assigned |= hit
    return SymbolSequence("".join(symbols.tolist()))


def aoi_composition(
    normalized: NormalizedCurve,
    partition: AOIPartition,
    include_fallback: Optional[bool] = None,
) -> Composition:
    """
    Share of normalized time spent in each AOI, with half-count smoothing.

    The fallback region forms an extra part when include_fallback is true,
    or (when it is None) whenever some point of this curve lies outside every box.
    """
    sequence = np.array(list(aoi_symbols(normalized, partition).symbols))
    counts = [np.count_nonzero(sequence == b.symbol) for b in partition.boxes]
    outside = int(np.count_nonzero(sequence == partition.fallback))
    if include_fallback is None:
        include_fallback = outside > 0
    if include_fallback:
        counts.append(outside)
    counts = np.asarray(counts, dtype=float)
    smoothed = (counts + 0.5) / (normalized.m + 0.5 * counts.size)
    return Composition(smoothed / smoothed.sum())
