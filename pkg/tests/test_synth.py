import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from subspace_recovery.errors import DimensionError, InputError
from subspace_recovery.schemas import Basis, GroundTruth, NoiseSpec
from subspace_recovery.synth import gen_linear, gen_pca
from subspace_recovery.utils import RandomStreams


class TestGenPca:
    def test_noiseless_samples_equal_their_mean(self):
        dataset, truth = gen_pca(6, 2, [3, 1, 4], 2.0, NoiseSpec(etas=[0.0]), RandomStreams(1))
        for block, mean in zip(dataset.users, truth.means):
            np.testing.assert_array_equal(block, np.tile(mean, (block.shape[0], 1)))
        assert dataset.sample_counts == [3, 1, 4]

    def test_deterministic_in_the_seed(self):
        noise = NoiseSpec(kind="diagonal", etas=[0.5, 1.5])
        first, first_truth = gen_pca(5, 2, [2] * 10, 1.0, noise, RandomStreams(42, 3))
        second, second_truth = gen_pca(5, 2, [2] * 10, 1.0, noise, RandomStreams(42, 3))
        other, _ = gen_pca(5, 2, [2] * 10, 1.0, noise, RandomStreams(42, 4))
        for a, b in zip(first.users, second.users):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(first_truth.basis.entries, second_truth.basis.entries)
        assert not np.array_equal(first.users[0], other.users[0])

    def test_users_do_not_depend_on_later_users(self):
        noise = NoiseSpec(etas=[1.0])
        short, _ = gen_pca(4, 1, [2] * 3, 1.0, noise, RandomStreams(9))
        long, _ = gen_pca(4, 1, [2] * 8, 1.0, noise, RandomStreams(9))
        for a, b in zip(short.users, long.users):
            np.testing.assert_array_equal(a, b)

    def test_means_stay_in_the_subspace(self):
        _, truth = gen_pca(10, 3, [2] * 50, 3.0, NoiseSpec(), RandomStreams(5))
        u = truth.basis.entries
        residual = truth.means - (truth.means @ u) @ u.T
        assert np.abs(residual).max() <= 1e-10 * 3.0

    def test_rademacher_means(self):
        _, truth = gen_pca(6, 2, [2] * 20, 1.5, NoiseSpec(), RandomStreams(8), mean_family="rademacher")
        coords = truth.means @ truth.basis.entries / 1.5
        assert_allclose(np.abs(coords), np.ones_like(coords), atol=1e-12)

    def test_etas_cycle_over_users(self):
        _, truth = gen_pca(4, 1, [2] * 5, 1.0, NoiseSpec(etas=[1.0, 3.0]), RandomStreams(2))
        assert truth.etas == [1.0, 3.0, 1.0, 3.0, 1.0]

    def test_diagonal_noise_scales(self):
        dataset, truth = gen_pca(8, 1, [4000], 1.0, NoiseSpec(kind="diagonal", etas=[2.0]), RandomStreams(4))
        spread = (dataset.users[0] - truth.means[0]).std(axis=0)
        assert spread.max() == pytest.approx(2.0, rel=0.1)
        assert spread.min() >= 0.9 * 0.1 * 2.0

    def test_complement_noise_avoids_the_subspace(self):
        noise = NoiseSpec(kind="complement", alpha=0.0)
        dataset, truth = gen_pca(7, 2, [5] * 4, 1.0, noise, RandomStreams(6))
        u = truth.basis.entries
        for block, mean in zip(dataset.users, truth.means):
            assert np.abs((block - mean) @ u).max() < 1e-12

    def test_rejects_linear_noise(self):
        with pytest.raises(InputError):
            gen_pca(5, 1, [2], 1.0, NoiseSpec(kind="measurement"), RandomStreams(0))

    def test_rejects_full_dimension(self):
        with pytest.raises(DimensionError):
            gen_pca(3, 3, [2], 1.0, NoiseSpec(), RandomStreams(0))

    def test_rejects_empty_users(self):
        with pytest.raises(InputError):
            gen_pca(3, 1, [2, 0], 1.0, NoiseSpec(), RandomStreams(0))

    @pytest.mark.slow
    def test_gaussian_means_covariance(self):
        sigma = 1.0
        _, truth = gen_pca(3, 1, [1] * 200_000, sigma, NoiseSpec(), RandomStreams(12))
        covariance = truth.means.T @ truth.means / truth.means.shape[0]
        assert_allclose(covariance, sigma**2 * truth.basis.projector(), atol=0.01 * sigma**2)

    @pytest.mark.slow
    def test_complement_noise_makes_samples_isotropic(self):
        noise = NoiseSpec(kind="complement", alpha=1.0)
        dataset, _ = gen_pca(3, 1, [5] * 100_000, 1.0, noise, RandomStreams(13))
        pooled = np.vstack(dataset.users)
        covariance = pooled.T @ pooled / pooled.shape[0]
        assert_allclose(covariance, 2.0 * np.eye(3), atol=0.02)


class TestGenLinear:
    def test_noiseless_responses(self):
        dataset, truth = gen_linear(6, 2, [3] * 4, 1.0, NoiseSpec(kind="independent", etas=[0.0]), RandomStreams(1))
        for x, y, beta in zip(dataset.features, dataset.responses, truth.coeffs):
            assert_allclose(y, x @ beta, rtol=0, atol=1e-15)
            assert set(np.unique(x)) <= {-1.0, 1.0}

    def test_coefficients_respect_the_cap(self):
        noise = NoiseSpec(kind="independent", etas=[1.0])
        _, truth = gen_linear(8, 2, [2] * 50, 3.0, noise, RandomStreams(2), r_cap=1.5)
        assert np.linalg.norm(truth.coeffs, axis=1).max() <= 1.5 * (1 + 1e-12)
        assert truth.r == 1.5

    def test_deterministic_in_the_seed(self):
        noise = NoiseSpec(kind="measurement")
        first, _ = gen_linear(5, 1, [2] * 6, 1.0, noise, RandomStreams(77, 1), measurement="gaussian")
        second, _ = gen_linear(5, 1, [2] * 6, 1.0, noise, RandomStreams(77, 1), measurement="gaussian")
        for a, b in zip(first.responses, second.responses):
            np.testing.assert_array_equal(a, b)

    def test_rejects_pca_noise(self):
        with pytest.raises(InputError):
            gen_linear(5, 1, [2], 1.0, NoiseSpec(kind="spherical"), RandomStreams(0))

    @pytest.mark.parametrize("measurement", ["rademacher", "gaussian"])
    def test_identity_feature_covariance(self, measurement):
        noise = NoiseSpec(kind="independent", etas=[1.0])
        dataset, _ = gen_linear(4, 1, [5] * 20_000, 1.0, noise, RandomStreams(3), measurement=measurement)
        pooled = np.vstack(dataset.features)
        assert_allclose(pooled.T @ pooled / pooled.shape[0], np.eye(4), atol=0.02)

    def test_measurement_noise_is_mean_zero_but_dependent(self):
        noise = NoiseSpec(kind="measurement")
        dataset, truth = gen_linear(3, 1, [100_000], 1.0, noise, RandomStreams(21), measurement="gaussian")
        x, y = dataset.features[0], dataset.responses[0]
        z = y - x @ truth.coeffs[0]
        edges = np.quantile(x[:, 0], [0.2, 0.4, 0.6, 0.8])
        bins = np.digitize(x[:, 0], edges)
        for label in range(5):
            selected = z[bins == label]
            assert abs(selected.mean()) <= 4 * selected.std(ddof=1) / np.sqrt(selected.size)
        u = truth.basis.entries
        complement = x - (x @ u) @ u.T
        correlation = np.corrcoef(z**2, np.sum(complement**2, axis=1))[0, 1]
        assert correlation > 0.3


class TestGroundTruth:
    @pytest.fixture
    def line(self) -> Basis:
        return Basis(entries=np.eye(3)[:, :1])

    def test_rejects_means_outside_the_subspace(self, line):
        with pytest.raises(ValidationError):
            GroundTruth(basis=line, means=np.array([[1.0, 1.0, 0.0]]), sigma=1.0, etas=[1.0])

    def test_rejects_coefficients_above_the_cap(self, line):
        with pytest.raises(ValidationError):
            GroundTruth(basis=line, coeffs=np.array([[2.0, 0.0, 0.0]]), sigma=1.0, r=1.0, etas=[0.0])

    def test_vectors_prefers_means(self, line):
        truth = GroundTruth(basis=line, means=np.array([[2.0, 0.0, 0.0]]), sigma=1.0, etas=[1.0])
        np.testing.assert_array_equal(truth.vectors, [[2.0, 0.0, 0.0]])
