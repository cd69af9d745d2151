"""
Dataset Loading and Preprocessing
=================================

Reads the trajectory, label, AOI and external-measure files and turns each
(id, question) trajectory into a LabeledSample:
1. Build the raw curve (timestamps must strictly increase)
2. Drop trajectories that are too slow or too short
3. Extract mouse-movement measures from the raw pixels
4. Standardize by viewport (per-question min-max when no viewport is known)
5. Differentiate and time-normalize

File formats (CSV with header):
    trajectories  id,question,t_ms,x,y,viewport_w,viewport_h
    labels        id,question,label
    measures      id,question,measure_name,value
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .config import PreprocessSettings, Standardization
from .errors import DataError, InvalidInputError
from .funcdata import (
    AOIPartition,
    Curve,
    LabeledSample,
    MeasureVector,
    extract_measures,
    normalized_derivatives,
    standardize,
    standardize_minmax,
)

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["id", "question", "t_ms", "x", "y", "viewport_w", "viewport_h"]
LABEL_COLUMNS = ["id", "question", "label"]
MEASURE_COLUMNS = ["id", "question", "measure_name", "value"]
FORMAT_VERSION = 1


def _read_csv(path: str, columns: List[str], kind: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={"id": str, "question": str}, keep_default_na=True)
    except FileNotFoundError as e:
        raise DataError(f"{kind} file not found: {path}") from e
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataError(f"Cannot read {kind} file {path}: {e}") from e
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{kind} file {path} lacks columns {missing}")
    return frame[columns]


def load_trajectories(path: str) -> pd.DataFrame:
    frame = _read_csv(path, TRAJECTORY_COLUMNS, "trajectory")
    numeric = ["t_ms", "x", "y", "viewport_w", "viewport_h"]
    try:
        frame[numeric] = frame[numeric].apply(pd.to_numeric, errors="raise")
    except (ValueError, TypeError) as e:
        raise DataError(f"Non-numeric trajectory values in {path}: {e}") from e
    if frame[["t_ms", "x", "y"]].isna().any().any():
        raise DataError(f"Missing t_ms/x/y values in {path}")
    return frame


def load_labels(path: str) -> Dict[Tuple[str, str], int]:
    frame = _read_csv(path, LABEL_COLUMNS, "label")
    labels: Dict[Tuple[str, str], int] = {}
    for row in frame.itertuples(index=False):
        try:
            label = int(row.label)
        except (TypeError, ValueError) as e:
            raise DataError(f"Label of {row.id}/{row.question} is not an integer: {row.label!r}") from e
        if label < 1 or label != row.label:
            raise DataError(f"Labels must be integers >= 1, got {row.label!r} for {row.id}/{row.question}")
        labels[(row.id, row.question)] = label
    return labels


def load_external_measures(path: str) -> Dict[Tuple[str, str], Dict[str, float]]:
    frame = _read_csv(path, MEASURE_COLUMNS, "measure")
    out: Dict[Tuple[str, str], Dict[str, float]] = {}
    for row in frame.itertuples(index=False):
        try:
            value = float(row.value)
        except (TypeError, ValueError) as e:
            raise DataError(f"Measure {row.measure_name} of {row.id}/{row.question} is not numeric") from e
        out.setdefault((row.id, row.question), {})[str(row.measure_name)] = value
    return out


def load_partition(path: str) -> AOIPartition:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"AOI file not found: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Cannot read AOI file {path}: {e}") from e
    try:
        return AOIPartition.from_json(document)
    except InvalidInputError as e:
        raise DataError(f"Invalid AOI partition in {path}: {e}") from e


@dataclass
class PreprocessedDataset:
    """Samples in a fixed order plus the trajectories that were dropped."""

    samples: List[LabeledSample]
    dropped: List[Dict[str, str]] = field(default_factory=list)
    questions: List[str] = field(default_factory=list)

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.samples]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def fingerprint(self) -> str:
        """Hash of ids, labels, standardized curves and measures."""
        digest = hashlib.sha256()
        for s in self.samples:
            digest.update(f"{s.id}|{s.question}|{s.label}|".encode("utf-8"))
            digest.update(np.ascontiguousarray(s.curve.grid, dtype="<f8").tobytes())
            digest.update(np.ascontiguousarray(s.curve.values, dtype="<f8").tobytes())
            for order in sorted(s.normalized):
                digest.update(np.ascontiguousarray(s.normalized[order].values, dtype="<f8").tobytes())
            digest.update(json.dumps(s.measures.as_dict(), sort_keys=True).encode("utf-8"))
        return digest.hexdigest()

    def covariates(self, names: List[str]) -> np.ndarray:
        """Measure matrix (samples x names) for type II super-learners."""
        try:
            return np.array([[s.measures.value(n) for n in names] for s in self.samples], dtype=float)
        except InvalidInputError as e:
            raise DataError(f"Covariate measure unavailable: {e}") from e


def _sample_measures(
    raw: Curve,
    settings: PreprocessSettings,
    external: Optional[Dict[str, float]],
) -> MeasureVector:
    measures = extract_measures(raw, settings.hover_threshold_ms, settings.flip_threshold)
    if external:
        measures.personalized = dict(sorted(external.items()))
    return measures


def preprocess_frames(
    trajectories: pd.DataFrame,
    labels: Dict[Tuple[str, str], int],
    settings: PreprocessSettings,
    question: Optional[str] = None,
    external: Optional[Dict[Tuple[str, str], Dict[str, float]]] = None,
) -> PreprocessedDataset:
    """Turn loaded tables into labeled, preprocessed samples."""
    external = external or {}
    if question is not None:
        trajectories = trajectories[trajectories["question"] == question]
    questions = sorted(trajectories["question"].unique().tolist())
    qualify = len(questions) > 1

    dropped: List[Dict[str, str]] = []
    kept = []  # (key, raw curve, viewport or None)
    for (sid, q), group in trajectories.groupby(["id", "question"], sort=True):
        name = f"{sid}/{q}" if qualify else str(sid)
        try:
            raw = Curve(group["t_ms"].to_numpy(), group[["x", "y"]].to_numpy())
        except InvalidInputError as e:
            raise DataError(f"Trajectory {sid}/{q}: {e}") from e
        if raw.n_points < settings.min_points:
            logger.warning(f"Dropping {name}: {raw.n_points} points, need {settings.min_points}")
            dropped.append({"id": name, "reason": "too_short"})
            continue
        response_time = raw.grid[-1] - raw.grid[0]
        if settings.max_response_time_ms is not None and response_time > settings.max_response_time_ms:
            logger.warning(f"Dropping {name}: response time {response_time:.0f} ms")
            dropped.append({"id": name, "reason": "too_slow"})
            continue
        if (sid, q) not in labels:
            logger.warning(f"Dropping {name}: no label")
            dropped.append({"id": name, "reason": "unlabeled"})
            continue
        viewport = group[["viewport_w", "viewport_h"]].iloc[0].to_numpy(dtype=float)
        usable = np.all(np.isfinite(viewport)) and np.all(viewport > 0)
        if settings.standardization == Standardization.MINMAX or not usable:
            viewport = None
        kept.append(((sid, q, name), raw, viewport))

    # Curves without a viewport are min-max scaled within their question
    standardized: Dict[str, Curve] = {}
    for q in questions:
        group = [(key, raw) for key, raw, vp in kept if key[1] == q and vp is None]
        for (key, _), curve in zip(group, standardize_minmax([raw for _, raw in group])):
            standardized[key[2]] = curve
    for key, raw, vp in kept:
        if vp is not None:
            standardized[key[2]] = standardize(raw, (vp[0], vp[1]))

    samples = []
    for (sid, q, name), raw, _ in kept:
        curve = standardized[name]
        samples.append(LabeledSample(
            id=name,
            question=q,
            curve=curve,
            normalized=normalized_derivatives(curve, settings.grid_size, settings.normalize_before_derivative),
            measures=_sample_measures(raw, settings, external.get((sid, q))),
            label=labels[(sid, q)],
        ))

    logger.info(f"Preprocessed {len(samples)} trajectories ({len(dropped)} dropped)")
    return PreprocessedDataset(samples=samples, dropped=dropped, questions=questions)


def save_preprocessed(dataset: PreprocessedDataset, path: Path, settings: PreprocessSettings) -> None:
    """Write the standardized curves, measures and labels as JSON."""
    document = {
        "format_version": FORMAT_VERSION,
        "settings": settings.model_dump(mode="json"),
        "questions": dataset.questions,
        "dropped": dataset.dropped,
        "samples": [
            {
                "id": s.id,
                "question": s.question,
                "label": s.label,
                "grid": s.curve.grid.tolist(),
                "values": s.curve.values.tolist(),
                "measures": {k: v for k, v in s.measures.as_dict().items() if k not in s.measures.personalized},
                "personalized": s.measures.personalized,
            }
            for s in dataset.samples
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(document, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


def load_preprocessed(path: Path) -> Tuple[PreprocessedDataset, PreprocessSettings]:
    """Inverse of save_preprocessed; normalized curves are rebuilt."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"Preprocessed dataset not found: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Cannot read preprocessed dataset {path}: {e}") from e
    if document.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {document.get('format_version')}")

    settings = PreprocessSettings.model_validate(document["settings"])
    samples = []
    for entry in document["samples"]:
        curve = Curve(np.asarray(entry["grid"]), np.asarray(entry["values"]))
        samples.append(LabeledSample(
            id=entry["id"],
            question=entry["question"],
            curve=curve,
            normalized=normalized_derivatives(curve, settings.grid_size, settings.normalize_before_derivative),
            measures=MeasureVector(**entry["measures"], personalized=entry.get("personalized", {})),
            label=int(entry["label"]),
        ))
    return PreprocessedDataset(samples, document.get("dropped", []), document.get("questions", [])), settings
