"""
Distance Cache Tests
====================

Tests for the binary matrix format, the cache and task seeding.
"""

import numpy as np
import pandas as pd
import pytest

from conftest import random_samples
from src.analytics.distance_cache import DistanceCache, export_csv, read_matrix, write_matrix
from src.analytics.errors import DataError
from src.analytics.seeding import derive_int, derive_rng
from src.analytics.semimetrics import SemiMetricSpec, pairwise_matrix


@pytest.fixture
def samples(rng):
    return random_samples(rng, 6)


@pytest.fixture
def spec():
    return SemiMetricSpec.from_name("L2", 1)


class TestMatrixFile:
    """Test reading and writing the binary layout."""

    def test_bit_exact_reload(self, tmp_path, samples, spec):
        matrix = pairwise_matrix(samples, spec)
        path = tmp_path / "m.fdcm"
        write_matrix(path, matrix)
        loaded = read_matrix(path, spec)
        np.testing.assert_array_equal(loaded.entries, matrix.entries)
        assert loaded.row_ids == matrix.row_ids
        assert not list(tmp_path.glob("*.tmp"))

    def test_wrong_spec_rejected(self, tmp_path, samples, spec):
        path = tmp_path / "m.fdcm"
        write_matrix(path, pairwise_matrix(samples, spec))
        with pytest.raises(DataError, match="different semi-metric"):
            read_matrix(path, SemiMetricSpec.from_name("L1", 1))

    def test_truncated_file_rejected(self, tmp_path, samples, spec):
        path = tmp_path / "m.fdcm"
        write_matrix(path, pairwise_matrix(samples, spec))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError):
            read_matrix(path, spec)

    def test_garbage_rejected(self, tmp_path, spec):
        path = tmp_path / "m.fdcm"
        path.write_bytes(b"not a matrix")
        with pytest.raises(DataError):
            read_matrix(path, spec)

    def test_single_sample(self, tmp_path, samples, spec):
        """A 1x1 matrix has no upper-triangle entries."""
        path = tmp_path / "m.fdcm"
        write_matrix(path, pairwise_matrix(samples[:1], spec))
        assert read_matrix(path, spec).entries.shape == (1, 1)

    def test_csv_export(self, tmp_path, samples, spec):
        matrix = pairwise_matrix(samples, spec)
        path = tmp_path / "csv" / "m.csv"
        export_csv(matrix, path)
        frame = pd.read_csv(path, index_col="id")
        assert list(frame.index) == list(matrix.row_ids)
        np.testing.assert_array_equal(frame.to_numpy(), matrix.entries)


class TestDistanceCache:
    """Test hit/miss accounting and invalidation."""

    def test_second_lookup_hits(self, tmp_path, samples, spec):
        cache = DistanceCache(tmp_path, "a" * 64)
        first, hit = cache.get_or_compute(spec, samples)
        assert not hit
        second, hit = cache.get_or_compute(spec, samples)
        assert hit
        np.testing.assert_array_equal(first.entries, second.entries)
        assert (cache.hits, cache.misses) == (1, 1)

    def test_dataset_fingerprint_separates_files(self, tmp_path, spec):
        assert DistanceCache(tmp_path, "a" * 64).path_for(spec) != DistanceCache(tmp_path, "b" * 64).path_for(spec)

    def test_different_ids_recompute(self, tmp_path, samples, spec):
        cache = DistanceCache(tmp_path, "a" * 64)
        cache.get_or_compute(spec, samples)
        matrix, hit = cache.get_or_compute(spec, samples[:4])
        assert not hit
        assert len(matrix.row_ids) == 4

    def test_corrupt_file_recomputed(self, tmp_path, samples, spec):
        cache = DistanceCache(tmp_path, "a" * 64)
        cache.path_for(spec).write_bytes(b"junk")
        _, hit = cache.get_or_compute(spec, samples)
        assert not hit
        assert read_matrix(cache.path_for(spec), spec).entries.shape == (6, 6)


class TestSeeding:
    """Test per-task random streams."""

    def test_same_key_same_stream(self):
        a = derive_rng(7, "fkNN:L2[a=0]", 3).random(5)
        b = derive_rng(7, "fkNN:L2[a=0]", 3).random(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_separate_streams(self):
        base = derive_rng(7, "task", 0).random(5)
        assert not np.array_equal(base, derive_rng(7, "task", 1).random(5))
        assert not np.array_equal(base, derive_rng(7, "other", 0).random(5))
        assert not np.array_equal(base, derive_rng(8, "task", 0).random(5))

    def test_integer_seed_range(self):
        value = derive_int(1, "forest", 2, 0)
        assert 0 <= value < 2 ** 32
        assert value == derive_int(1, "forest", 2, 0)
