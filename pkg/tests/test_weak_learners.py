"""
Weak Learner Tests
==================

Tests for fkNN, kNCD and parameter tuning on precomputed distances.
"""

import numpy as np
import pytest

from conftest import two_cluster_matrix
from src.analytics.errors import InvalidInputError, KernelFallbackWarning
from src.analytics.semimetrics import SemiMetricSpec
from src.analytics.weak_learners import (
    Kernel,
    LearnerBase,
    ProbMatrix,
    WeakLearnerSpec,
    default_h_grid,
    default_k_grid,
    fknn_predict,
    fknn_proba,
    fknn_proba_matrix,
    kncd_proba,
    kncd_proba_matrix,
    predict_classes,
    predict_proba,
    tune_param,
)

L2 = SemiMetricSpec.from_name("L2")


def alternating_splits(n: int):
    """Two splits: evens train / odds validate, then the reverse."""
    evens, odds = np.arange(0, n, 2), np.arange(1, n, 2)
    return [(evens, odds), (odds, evens)]


class TestFkNN:
    """Test fkNN probabilities and prediction."""

    def test_plain_neighbourhood(self):
        prob = fknn_proba([1.0, 2.0, 3.0, 4.0], [1, 1, 2, 2], k=2)
        np.testing.assert_allclose(prob, [1.0, 0.0])

    def test_tie_enlarges_neighbourhood(self):
        """Two points share the 2nd smallest distance, so three vote."""
        prob = fknn_proba([1.0, 2.0, 2.0, 5.0], [1, 1, 2, 2], k=2)
        np.testing.assert_allclose(prob, [2 / 3, 1 / 3])

    def test_all_training_points(self):
        prob = fknn_proba([1.0, 2.0, 3.0, 4.0], [1, 2, 2, 2], k=4)
        np.testing.assert_allclose(prob, [0.25, 0.75])

    def test_absent_class_gets_zero(self):
        prob = fknn_proba([1.0, 2.0], [1, 1], k=1, classes=[1, 2, 3])
        np.testing.assert_allclose(prob, [1.0, 0.0, 0.0])

    def test_k_out_of_range(self):
        with pytest.raises(InvalidInputError):
            fknn_proba([1.0, 2.0], [1, 2], k=3)
        with pytest.raises(InvalidInputError):
            fknn_proba([1.0, 2.0], [1, 2], k=0)

    def test_matrix_rows_sum_to_one(self, rng):
        dists = rng.uniform(size=(7, 12))
        labels = rng.integers(1, 4, size=12)
        probs = fknn_proba_matrix(dists, labels, 5, classes=[1, 2, 3])
        ProbMatrix(probs, (1, 2, 3))

    def test_monotone_transform_of_distances(self, rng):
        """Only the order of distances matters, ties included."""
        smooth = rng.uniform(0, 2, size=(6, 15))
        tied = rng.integers(0, 4, size=(6, 15)).astype(float)
        labels = rng.integers(1, 4, size=15)
        for dists in (smooth, tied):
            for k in (1, 4, 9):
                np.testing.assert_array_equal(
                    fknn_proba_matrix(np.exp(3 * dists), labels, k, classes=[1, 2, 3]),
                    fknn_proba_matrix(dists, labels, k, classes=[1, 2, 3]),
                )

    def test_training_order_does_not_matter(self, rng):
        dists = rng.integers(0, 5, size=(6, 15)).astype(float)
        labels = rng.integers(1, 4, size=15)
        order = rng.permutation(15)
        for k in (1, 3, 15):
            np.testing.assert_allclose(
                fknn_proba_matrix(dists[:, order], labels[order], k, classes=[1, 2, 3]),
                fknn_proba_matrix(dists, labels, k, classes=[1, 2, 3]),
                rtol=0, atol=1e-12,
            )

    def test_predict_argmax(self, rng):
        assert fknn_predict([0.2, 0.8], rng, classes=[4, 9]) == 9

    def test_predict_tie_uses_rng(self):
        """Exact ties are broken by the generator, reproducibly."""
        draws = [fknn_predict([0.5, 0.5], np.random.default_rng(s), classes=[1, 2]) for s in range(20)]
        assert set(draws) == {1, 2}
        again = [fknn_predict([0.5, 0.5], np.random.default_rng(s), classes=[1, 2]) for s in range(20)]
        assert draws == again

    def test_predict_classes(self, rng):
        probs = np.array([[0.9, 0.1], [0.3, 0.7]])
        np.testing.assert_array_equal(predict_classes(probs, [1, 2], rng), [1, 2])


class TestKNCD:
    """Test kernel-weighted probabilities."""

    def test_uniform_matches_fknn(self):
        """With h at the k-th smallest distance the uniform kernel selects the fkNN neighbourhood."""
        dists, labels = [1.0, 2.0, 2.0, 5.0], [1, 1, 2, 2]
        np.testing.assert_allclose(kncd_proba(dists, labels, 2.0, Kernel.UNIFORM), fknn_proba(dists, labels, 2))

    @pytest.mark.parametrize("kernel", [Kernel.GAUSSIAN, Kernel.UNIFORM])
    def test_training_order_does_not_matter(self, rng, kernel):
        """Permuting the training columns together with their labels leaves every row unchanged."""
        dists = rng.uniform(0, 2, size=(6, 15))
        labels = rng.integers(1, 4, size=15)
        order = rng.permutation(15)
        h = float(dists.min(axis=1).max()) + 0.1
        probs, fallback = kncd_proba_matrix(dists, labels, h, kernel, classes=[1, 2, 3])
        permuted, permuted_fallback = kncd_proba_matrix(
            dists[:, order], labels[order], h, kernel, classes=[1, 2, 3]
        )
        np.testing.assert_allclose(permuted, probs, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(permuted_fallback, fallback)
        assert not fallback.any()

    def test_gaussian_weights(self):
        prob = kncd_proba([0.0, 1.0], [1, 2], h=1.0)
        w = np.exp(-0.5)
        np.testing.assert_allclose(prob, [1 / (1 + w), w / (1 + w)])

    def test_large_bandwidth_tends_to_class_shares(self):
        prob = kncd_proba([1.0, 2.0, 3.0, 4.0], [1, 2, 2, 2], h=1e6)
        np.testing.assert_allclose(prob, [0.25, 0.75], atol=1e-9)

    def test_zero_mass_falls_back(self):
        with pytest.warns(KernelFallbackWarning):
            prob, fallback = kncd_proba([5.0, 6.0], [2, 1], h=1.0, kernel=Kernel.UNIFORM, return_fallback=True)
        assert fallback
        np.testing.assert_allclose(prob, [0.0, 1.0])

    def test_gaussian_underflow_falls_back(self):
        with pytest.warns(KernelFallbackWarning):
            probs, fallback = kncd_proba_matrix(np.array([[100.0, 200.0], [0.5, 0.6]]), [1, 2], h=1.0)
        np.testing.assert_array_equal(fallback, [True, False])
        np.testing.assert_allclose(probs[0], [1.0, 0.0])

    def test_bandwidth_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            kncd_proba([1.0], [1], h=0.0)


class TestWeakLearnerSpec:
    """Test learner naming and parameter validation."""

    def test_name(self):
        spec = WeakLearnerSpec(LearnerBase.FKNN, SemiMetricSpec.from_name("globMax-x", 1))
        assert spec.name == "fkNN:globMax-x[a=1]"

    def test_k_coerced_to_int(self):
        spec = WeakLearnerSpec(LearnerBase.FKNN, L2, param=3.0)
        assert spec.param == 3
        assert isinstance(spec.param, int)

    def test_invalid_parameters(self):
        with pytest.raises(InvalidInputError):
            WeakLearnerSpec(LearnerBase.FKNN, L2, param=2.5)
        with pytest.raises(InvalidInputError):
            WeakLearnerSpec(LearnerBase.KNCD, L2, param=0.0)

    def test_untuned_learner_cannot_predict(self):
        with pytest.raises(InvalidInputError):
            predict_proba(WeakLearnerSpec(LearnerBase.KNCD, L2), np.ones((1, 2)), [1, 2], [1, 2])

    def test_to_dict(self):
        document = WeakLearnerSpec(LearnerBase.KNCD, L2, param=0.5, kernel=Kernel.UNIFORM).to_dict()
        assert document["base"] == "kNCD"
        assert document["kernel"] == "uniform"
        assert document["semimetric"]["name"] == "L2"


class TestDefaultGrids:
    """Test the default k and h grids."""

    def test_k_grid(self):
        assert default_k_grid(10) == [1, 3, 5, 7, 9]
        assert default_k_grid(100)[-1] == 31
        assert default_k_grid(1) == [1]

    def test_h_grid_uses_positive_upper_triangle(self):
        entries, _ = two_cluster_matrix()
        grid = default_h_grid(entries)
        assert grid == sorted(grid)
        assert min(grid) > 0
        assert max(grid) <= entries.max()

    def test_h_grid_all_zero(self):
        assert default_h_grid(np.zeros((3, 3))) == [1.0]


class TestTuneParam:
    """Test grid selection and its tie rules."""

    def test_fknn_prefers_smaller_k(self):
        entries, labels = two_cluster_matrix()
        result = tune_param(alternating_splits(20), WeakLearnerSpec(LearnerBase.FKNN, L2), entries, labels)
        assert set(result.grid_scores.values()) == {1.0}
        assert result.spec.param == 1
        assert result.accuracy == 1.0

    def test_kncd_prefers_larger_h(self):
        entries, labels = two_cluster_matrix()
        result = tune_param(alternating_splits(20), WeakLearnerSpec(LearnerBase.KNCD, L2), entries, labels)
        assert set(result.grid_scores.values()) == {1.0}
        assert result.spec.param == max(result.grid_scores)

    def test_explicit_grid_order_does_not_matter(self):
        entries, labels = two_cluster_matrix()
        splits = alternating_splits(20)
        fknn = tune_param(splits, WeakLearnerSpec(LearnerBase.FKNN, L2), entries, labels, param_grid=[3, 1])
        kncd = tune_param(splits, WeakLearnerSpec(LearnerBase.KNCD, L2), entries, labels, param_grid=[0.5, 2.0])
        assert fknn.spec.param == 1
        assert kncd.spec.param == 2.0

    def test_out_of_fold_probabilities(self):
        entries, labels = two_cluster_matrix()
        result = tune_param(alternating_splits(20), WeakLearnerSpec(LearnerBase.FKNN, L2), entries, labels)
        np.testing.assert_array_equal(result.rows, np.arange(20))
        assert result.oof_probs.shape == (20, 2)
        np.testing.assert_array_equal(np.argmax(result.oof_probs, axis=1) + 1, labels)

    def test_fallbacks_counted(self):
        """A bandwidth below every distance falls back to 1-NN on each validation row."""
        entries, labels = two_cluster_matrix()
        spec = WeakLearnerSpec(LearnerBase.KNCD, L2, kernel=Kernel.UNIFORM)
        result = tune_param(alternating_splits(20), spec, entries, labels, param_grid=[0.001])
        assert result.fallbacks == 20
        assert result.accuracy == 1.0

    def test_independent_of_worker_count(self, rng):
        points = rng.normal(size=(30, 2))
        entries = np.linalg.norm(points[:, None] - points[None, :], axis=2)
        labels = rng.integers(1, 3, size=30)
        spec = WeakLearnerSpec(LearnerBase.FKNN, L2)
        serial = tune_param(alternating_splits(30), spec, entries, labels, seed=3, n_jobs=1)
        parallel = tune_param(alternating_splits(30), spec, entries, labels, seed=3, n_jobs=4)
        assert serial.grid_scores == parallel.grid_scores
        assert serial.spec == parallel.spec

    def test_empty_grid(self):
        entries, labels = two_cluster_matrix()
        with pytest.raises(InvalidInputError):
            tune_param(alternating_splits(20), WeakLearnerSpec(LearnerBase.FKNN, L2), entries, labels, param_grid=[])
