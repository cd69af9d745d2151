"""
Distance Cache
==============

Persists distance matrices so nested cross-validation pays for each
(dataset, semi-metric) pair once.

File layout (little-endian):
    magic    4 bytes   b"FDCM"
    version  uint16
    spec     64 bytes  hex sha256 fingerprint of the SemiMetricSpec
    n        uint32
    ids      uint32 byte count + UTF-8 JSON list of sample ids
    entries  n(n-1)/2 float64, strict upper triangle in row-major order
"""

import json
import logging
import os
import struct
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DataError
from .funcdata import AOIPartition, LabeledSample
from .semimetrics import DistanceMatrix, SemiMetricSpec, pairwise_matrix

logger = logging.getLogger(__name__)

MAGIC = b"FDCM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sH64sI")
_LENGTH = struct.Struct("<I")


def write_matrix(path: Path, matrix: DistanceMatrix) -> None:
    """Write a square matrix atomically in the binary cache layout."""
    if not matrix.is_square:
        raise DataError("Only square matrices can be cached")
    n = len(matrix.row_ids)
    ids = json.dumps(list(matrix.row_ids), separators=(",", ":")).encode("utf-8")
    upper = matrix.entries[np.triu_indices(n, k=1)].astype("<f8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, matrix.spec.fingerprint().encode("ascii"), n))
        f.write(_LENGTH.pack(len(ids)))
        f.write(ids)
        f.write(upper.tobytes())
    os.replace(tmp, path)


def read_matrix(path: Path, spec: SemiMetricSpec) -> DistanceMatrix:
    """Read a cached matrix, checking magic, version and spec fingerprint."""
    raw = Path(path).read_bytes()
    try:
        magic, version, fingerprint, n = _HEADER.unpack_from(raw, 0)
        offset = _HEADER.size
        (id_bytes,) = _LENGTH.unpack_from(raw, offset)
        offset += _LENGTH.size
        ids = json.loads(raw[offset:offset + id_bytes].decode("utf-8"))
        offset += id_bytes
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"Corrupt distance cache {path}: {e}") from e

    if magic != MAGIC or version != FORMAT_VERSION:
        raise DataError(f"{path} is not a version-{FORMAT_VERSION} distance cache")
    if fingerprint.decode("ascii", errors="replace") != spec.fingerprint():
        raise DataError(f"{path} was written for a different semi-metric than {spec.label}")
    if len(ids) != n:
        raise DataError(f"{path}: id list has {len(ids)} entries, header says {n}")

    count = n * (n - 1) // 2
    if offset + 8 * count != len(raw):
        raise DataError(f"{path}: expected {count} entries")
    upper = np.frombuffer(raw, dtype="<f8", count=count, offset=offset) if count else np.zeros(0)

    entries = np.zeros((n, n))
    entries[np.triu_indices(n, k=1)] = upper
    entries += entries.T
    return DistanceMatrix(spec=spec, row_ids=tuple(ids), col_ids=tuple(ids), entries=entries)


def export_csv(matrix: DistanceMatrix, path: Path) -> None:
    """Human-readable export, one row per sample id."""
    frame = pd.DataFrame(matrix.entries, index=list(matrix.row_ids), columns=list(matrix.col_ids))
    frame.index.name = "id"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, float_format="%.17g")


class DistanceCache:
    """Matrix files keyed by (dataset fingerprint, spec fingerprint)."""

    def __init__(self, cache_dir: Path, dataset_fingerprint: str):
        self.cache_dir = Path(cache_dir)
        self.dataset_fingerprint = dataset_fingerprint
        self.hits = 0
        self.misses = 0

    def path_for(self, spec: SemiMetricSpec) -> Path:
        return self.cache_dir / f"{self.dataset_fingerprint[:16]}_{spec.fingerprint()[:16]}.fdcm"

    def load(self, spec: SemiMetricSpec, ids: Sequence[str]) -> Optional[DistanceMatrix]:
        path = self.path_for(spec)
        if not path.exists():
            return None
        try:
            matrix = read_matrix(path, spec)
        except DataError as e:
            logger.warning(f"Ignoring unusable cache file: {e}")
            return None
        if matrix.row_ids != tuple(ids):
            logger.warning(f"Ignoring cache file {path.name}: sample ids differ")
            return None
        return matrix

    def get_or_compute(
        self,
        spec: SemiMetricSpec,
        samples: Sequence[LabeledSample],
        partition: Optional[AOIPartition] = None,
        n_jobs: int = 1,
    ) -> Tuple[DistanceMatrix, bool]:
        """Return (matrix, cache_hit)."""
        ids = [s.id for s in samples]
        cached = self.load(spec, ids)
        if cached is not None:
            self.hits += 1
            logger.info(f"  {spec.label}: cache hit")
            return cached, True

        self.misses += 1
        matrix = pairwise_matrix(samples, spec, partition=partition, n_jobs=n_jobs)
        write_matrix(self.path_for(spec), matrix)
        logger.info(f"  {spec.label}: computed and cached")
        return matrix, False
