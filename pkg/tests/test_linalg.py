import math

import numpy as np
import pytest
import scipy.linalg
from conftest import random_basis_pair, random_symmetric
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from pydantic import ValidationError
from scipy.stats import ks_2samp

from subspace_recovery.errors import DegenerateGapError, DimensionError, InputError, RankDeficientError
from subspace_recovery.linalg import (
    all_principal_angles,
    davis_kahan_bound,
    haar_basis,
    max_principal_angle_sin,
    orthonormalize,
    top_k_eigen,
)
from subspace_recovery.schemas import Basis


def spectral_projector_distance(first: Basis, second: Basis) -> float:
    difference = first.projector() - second.projector()
    return float(np.abs(scipy.linalg.eigvalsh(difference)).max())


class TestBasis:
    def test_rejects_non_orthonormal_columns(self):
        with pytest.raises(ValidationError):
            Basis(entries=[[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]])

    def test_rejects_full_dimension(self):
        with pytest.raises(ValidationError):
            Basis(entries=np.eye(3))

    def test_vector_becomes_single_column(self):
        basis = Basis(entries=[1.0, 0.0, 0.0])
        assert (basis.d, basis.k) == (3, 1)

    def test_entries_are_read_only(self):
        source = np.eye(3)[:, :1]
        basis = Basis(entries=source)
        source[0, 0] = 5.0
        assert basis.entries[0, 0] == 1.0
        with pytest.raises(ValueError):
            basis.entries[0, 0] = 2.0


class TestTopKEigen:
    def test_diagonal(self):
        result = top_k_eigen(np.diag([3.0, 2.0, 1.0]), 2)
        assert_allclose(result.values, [3.0, 2.0])
        assert result.gap == pytest.approx(1.0)
        assert max_principal_angle_sin(result.vectors, np.eye(3)[:, :2]) < 1e-12

    def test_identity_has_zero_gap(self):
        result = top_k_eigen(np.eye(3), 1)
        assert_allclose(result.values, [1.0])
        assert abs(result.gap) < 1e-12
        assert result.degenerate

    def test_inaccurate_eigenpairs_are_rejected(self, monkeypatch):
        exact = scipy.linalg.eigh

        def shifted(matrix, **kwargs):
            values, vectors = exact(matrix, **kwargs)
            return values + 1e-3, vectors

        monkeypatch.setattr(scipy.linalg, "eigh", shifted)
        with pytest.raises(InputError, match="residual"):
            top_k_eigen(np.diag([3.0, 2.0, 1.0]), 1)

    def test_two_by_two_swap(self):
        result = top_k_eigen([[0.0, 1.0], [1.0, 0.0]], 1)
        assert result.values[0] == pytest.approx(1.0)
        assert result.gap == pytest.approx(2.0)
        assert_allclose(result.vectors.entries[:, 0], [1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-12)

    def test_algebraic_ordering_ranks_negative_last(self):
        result = top_k_eigen(np.diag([-5.0, 1.0, 0.5]), 1)
        assert result.values[0] == pytest.approx(1.0)

    def test_k_at_least_d_is_dimension_error(self):
        with pytest.raises(DimensionError):
            top_k_eigen(np.eye(3), 3)

    def test_non_finite_is_input_error(self):
        matrix = np.eye(3)
        matrix[1, 1] = np.nan
        with pytest.raises(InputError):
            top_k_eigen(matrix, 1)

    def test_asymmetric_is_input_error(self):
        with pytest.raises(InputError):
            top_k_eigen([[1.0, 2.0], [0.0, 1.0]], 1)

    def test_tiny_asymmetry_is_absorbed(self):
        matrix = np.diag([2.0, 1.0, 0.0])
        matrix[0, 1] = 1e-12
        assert top_k_eigen(matrix, 1).values[0] == pytest.approx(2.0)

    @pytest.mark.parametrize("d", [5, 50, 200])
    def test_residual_and_orthonormality(self, rng, d):
        matrix = random_symmetric(rng, d)
        k = 3
        result = top_k_eigen(matrix, k)
        norm = max(1.0, float(scipy.linalg.norm(matrix, 2)))
        vectors = result.vectors.entries
        for index in range(k):
            residual = matrix @ vectors[:, index] - result.values[index] * vectors[:, index]
            assert np.linalg.norm(residual) <= 1e-8 * norm
        assert np.abs(vectors.T @ vectors - np.eye(k)).max() <= 1e-10
        assert np.all(np.diff(result.values) <= 0)

    def test_sign_convention_and_determinism(self, rng):
        matrix = random_symmetric(rng, 12)
        first = top_k_eigen(matrix, 4)
        second = top_k_eigen(matrix, 4)
        np.testing.assert_array_equal(first.vectors.entries, second.vectors.entries)
        for column in first.vectors.entries.T:
            leading = column[np.flatnonzero(np.abs(column) > 1e-12)[0]]
            assert leading > 0


class TestMaxPrincipalAngleSin:
    def test_identical(self):
        line = np.eye(3)[:, :1]
        assert max_principal_angle_sin(line, line) == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_lines(self):
        assert max_principal_angle_sin(np.eye(3)[:, :1], np.eye(3)[:, 1:2]) == pytest.approx(1.0)

    def test_forty_five_degrees(self):
        first = Basis(entries=[[1.0], [0.0], [0.0]])
        second = Basis(entries=[[math.cos(math.pi / 4)], [math.sin(math.pi / 4)], [0.0]])
        value = max_principal_angle_sin(first, second)
        assert value == pytest.approx(math.sin(math.pi / 4), abs=1e-10)
        assert value == pytest.approx(spectral_projector_distance(first, second), abs=1e-10)

    def test_mismatched_shapes(self):
        with pytest.raises(DimensionError):
            max_principal_angle_sin(np.eye(4)[:, :1], np.eye(4)[:, :2])
        with pytest.raises(DimensionError):
            max_principal_angle_sin(np.eye(4)[:, :1], np.eye(3)[:, :1])

    def test_symmetric_and_rotation_invariant(self, rng):
        for _ in range(50):
            first, second = random_basis_pair(rng, 7, 3)
            rotation, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            value = max_principal_angle_sin(first, second)
            assert value == pytest.approx(max_principal_angle_sin(second, first), abs=1e-12)
            rotated = Basis(entries=first.entries @ rotation)
            assert max_principal_angle_sin(rotated, second) == pytest.approx(value, abs=1e-12)

    def test_agrees_with_projector_formulas(self, rng):
        for _ in range(50):
            first, second = random_basis_pair(rng, 8, 3)
            first_complement = scipy.linalg.null_space(first.entries.T)
            second_complement = scipy.linalg.null_space(second.entries.T)
            value = max_principal_angle_sin(first, second)
            assert value == pytest.approx(spectral_projector_distance(first, second), abs=1e-9)
            assert value == pytest.approx(scipy.linalg.norm(first.entries.T @ second_complement, 2), abs=1e-9)
            assert value == pytest.approx(scipy.linalg.norm(first_complement.T @ second.entries, 2), abs=1e-9)

    def test_metric_axioms_on_random_triples(self, rng):
        for _ in range(10_000):
            a, b = random_basis_pair(rng, 5, 2)
            c = haar_basis(5, 2, rng)
            ac = max_principal_angle_sin(a, c)
            assert 0.0 <= ac <= 1.0
            assert ac <= max_principal_angle_sin(a, b) + max_principal_angle_sin(b, c) + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1), d=st.integers(min_value=2, max_value=9))
    def test_zero_only_for_equal_subspaces(self, seed, d):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, d))
        basis = haar_basis(d, k, rng)
        mixed, _ = np.linalg.qr(rng.standard_normal((k, k)))
        assert max_principal_angle_sin(basis, Basis(entries=basis.entries @ mixed)) <= 1e-9


class TestAllPrincipalAngles:
    def test_identical_planes(self, plane):
        assert_allclose(all_principal_angles(plane, plane), [0.0, 0.0], atol=1e-10)

    def test_shared_and_orthogonal_direction(self):
        first = np.eye(4)[:, [0, 1]]
        second = np.eye(4)[:, [0, 2]]
        assert_allclose(all_principal_angles(first, second), [0.0, math.pi / 2], atol=1e-10)

    def test_frobenius_identity(self, rng):
        for _ in range(20):
            first, second = random_basis_pair(rng, 6, 2)
            angles = np.array(all_principal_angles(first, second))
            frobenius = np.linalg.norm(first.projector() - second.projector(), "fro")
            assert frobenius == pytest.approx(math.sqrt(2 * np.sum(np.sin(angles) ** 2)), abs=1e-9)
            assert np.all(np.diff(angles) >= 0)
            assert angles[-1] == pytest.approx(math.asin(max_principal_angle_sin(first, second)), abs=1e-9)

    def test_smaller_first_subspace(self, rng):
        line = haar_basis(6, 1, rng)
        plane = haar_basis(6, 3, rng)
        assert len(all_principal_angles(line, plane)) == 1
        with pytest.raises(DimensionError):
            all_principal_angles(plane, line)


class TestDavisKahanBound:
    def test_unperturbed_is_zero(self):
        matrix = np.diag([2.0, 1.0, 0.0])
        assert davis_kahan_bound(matrix, matrix, 1) == 0.0

    def test_worked_example(self):
        matrix = np.diag([2.0, 1.0, 0.0])
        perturbed = matrix + 0.1 * np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        bound = davis_kahan_bound(matrix, perturbed, 1)
        assert bound == pytest.approx(0.2)
        actual = max_principal_angle_sin(top_k_eigen(matrix, 1).vectors, top_k_eigen(perturbed, 1).vectors)
        assert actual <= bound

    def test_degenerate_gap(self):
        with pytest.raises(DegenerateGapError):
            davis_kahan_bound(np.eye(3), np.eye(3), 1)

    def test_never_violated_on_random_perturbations(self, rng):
        d = 20
        for case in range(1000):
            matrix = random_symmetric(rng, d)
            k = int(rng.integers(1, 6))
            scale = 10.0 ** rng.uniform(-4, 0)
            perturbed = matrix + scale * random_symmetric(rng, d)
            bound = davis_kahan_bound(matrix, perturbed, k)
            actual = max_principal_angle_sin(top_k_eigen(matrix, k).vectors, top_k_eigen(perturbed, k).vectors)
            assert actual <= bound + 1e-12, f"case {case}"


class TestHaarBasis:
    def test_columns_orthonormal(self, rng):
        for _ in range(100):
            basis = haar_basis(9, 4, rng)
            assert np.abs(basis.entries.T @ basis.entries - np.eye(4)).max() <= 1e-10

    def test_rejects_full_dimension(self, rng):
        with pytest.raises(DimensionError):
            haar_basis(3, 3, rng)

    @pytest.mark.slow
    def test_second_moment_is_isotropic(self, rng):
        draws = np.array([haar_basis(2, 1, rng).entries[:, 0] for _ in range(100_000)])
        second_moment = draws.T @ draws / draws.shape[0]
        assert_allclose(second_moment, np.eye(2) / 2, atol=0.01)

    @pytest.mark.slow
    def test_left_invariance(self, rng):
        rotation, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        reference = np.eye(6)[:, :2]
        plain = [max_principal_angle_sin(reference, haar_basis(6, 2, rng)) for _ in range(10_000)]
        rotated = [
            max_principal_angle_sin(reference, Basis(entries=rotation @ haar_basis(6, 2, rng).entries))
            for _ in range(10_000)
        ]
        assert ks_2samp(plain, rotated).pvalue > 0.01


class TestOrthonormalize:
    def test_spans_input_columns(self, rng):
        matrix = rng.standard_normal((7, 3))
        basis = orthonormalize(matrix)
        residual = matrix - basis.entries @ (basis.entries.T @ matrix)
        assert np.abs(residual).max() < 1e-12
        assert np.all(np.diag(basis.entries.T @ matrix) > 0)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficientError):
            orthonormalize([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
