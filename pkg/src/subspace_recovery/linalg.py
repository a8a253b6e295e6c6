from typing import List, Tuple, Union

import numpy as np
import numpy.typing as npt
import scipy.linalg
from numpy.random import Generator

from subspace_recovery.errors import DegenerateGapError, DimensionError, InputError, RankDeficientError
from subspace_recovery.schemas import GAP_TOL, Basis, EigenResult, FloatArray

SYMMETRY_TOL = 1e-9
SIGN_TOL = 1e-12
RESIDUAL_TOL = 1e-8

BasisLike = Union[Basis, npt.ArrayLike]


def as_basis(value: BasisLike) -> Basis:
    if isinstance(value, Basis):
        return value
    return Basis(entries=value)


def _as_symmetric(matrix: npt.ArrayLike) -> FloatArray:
    array = np.asarray(matrix, dtype=np.float64)
    if array.ndim != 2 or array.shape[0] != array.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise InputError("Matrix has non-finite entries")
    scale = max(1.0, float(np.abs(array).max(initial=0.0)))
    asymmetry = float(np.abs(array - array.T).max(initial=0.0))
    if asymmetry > SYMMETRY_TOL * scale:
        raise InputError(f"Matrix is not symmetric (max asymmetry {asymmetry:.3e})")
    result: FloatArray = (array + array.T) / 2.0
    return result


def _fix_signs(vectors: FloatArray) -> FloatArray:
    """Flip each column so that its first entry above SIGN_TOL in magnitude is positive."""
    for column in range(vectors.shape[1]):
        significant = np.flatnonzero(np.abs(vectors[:, column]) > SIGN_TOL)
        if significant.size and vectors[significant[0], column] < 0:
            vectors[:, column] = -vectors[:, column]
    return vectors


def top_k_eigen(matrix: npt.ArrayLike, k: int) -> EigenResult:
    """
    Top-k eigenpairs of a symmetric matrix, ordered by algebraic value (largest first).

    The matrix is symmetrized before decomposition. Only the k+1 largest eigenvalues are
    computed; the (k+1)-th is used for the spectral gap.

    Args:
        matrix (array-like): Symmetric d×d matrix.
        k (int): Number of eigenpairs, 1 <= k < d.

    Returns:
        EigenResult: Descending eigenvalues, sign-normalized eigenvectors and the gap λ_k − λ_{k+1}.

    Raises:
        DimensionError: If the matrix is not square or k is outside [1, d).
        InputError: If the matrix has non-finite entries, is not symmetric, or the eigenpairs fail the
            residual check.
    """
    symmetric = _as_symmetric(matrix)
    d = symmetric.shape[0]
    if not 1 <= k < d:
        raise DimensionError(f"Need 1 <= k < d, got k={k}, d={d}")

    values, vectors = scipy.linalg.eigh(symmetric, subset_by_index=[d - k - 1, d - 1])
    values = values[::-1]
    vectors = _fix_signs(np.ascontiguousarray(vectors[:, ::-1][:, :k]))
    residual = float(np.abs(symmetric @ vectors - vectors * values[:k]).max())
    if residual > RESIDUAL_TOL * max(1.0, float(scipy.linalg.norm(symmetric))):
        raise InputError(f"Eigensolver residual {residual:.3e} exceeds tolerance")
    return EigenResult(
        values=values[:k],
        vectors=Basis(entries=vectors),
        gap=float(values[k - 1] - values[k]),
    )


def _check_same_shape(first: Basis, second: Basis) -> None:
    if first.d != second.d or first.k != second.k:
        raise DimensionError(f"Bases differ in shape: {first.d}×{first.k} versus {second.d}×{second.k}")


def max_principal_angle_sin(first: BasisLike, second: BasisLike) -> float:
    """Sine of the largest principal angle between two subspaces of equal dimension."""
    b1, b2 = as_basis(first), as_basis(second)
    _check_same_shape(b1, b2)
    # Component of span(b2) outside span(b1); its top singular value is sin θ_max
    residual = b2.entries - b1.entries @ (b1.entries.T @ b2.entries)
    largest = float(scipy.linalg.svdvals(residual)[0])
    return min(1.0, max(0.0, largest))


def all_principal_angles(first: BasisLike, second: BasisLike) -> List[float]:
    """
    All principal angles between span(first) and span(second), ascending, in radians.

    Requires dim(first) <= dim(second); the result has dim(first) entries.
    """
    b1, b2 = as_basis(first), as_basis(second)
    if b1.d != b2.d:
        raise DimensionError(f"Bases live in different dimensions: {b1.d} versus {b2.d}")
    if b1.k > b2.k:
        raise DimensionError(f"First subspace must not be larger than the second ({b1.k} > {b2.k})")
    angles = scipy.linalg.subspace_angles(b1.entries, b2.entries)
    return sorted(float(np.clip(angle, 0.0, np.pi / 2)) for angle in angles)


def davis_kahan_bound(matrix: npt.ArrayLike, perturbed: npt.ArrayLike, k: int) -> float:
    """
    Davis-Kahan variant: sin θ between the top-k eigenspaces of `matrix` and `perturbed` is at
    most 2‖matrix − perturbed‖ / (λ_k − λ_{k+1}), eigenvalues taken from `matrix`.

    Raises:
        DegenerateGapError: If λ_k − λ_{k+1} of `matrix` is not positive.
    """
    reference = _as_symmetric(matrix)
    other = _as_symmetric(perturbed)
    if reference.shape != other.shape:
        raise DimensionError(f"Matrices differ in shape: {reference.shape} versus {other.shape}")
    d = reference.shape[0]
    if not 1 <= k < d:
        raise DimensionError(f"Need 1 <= k < d, got k={k}, d={d}")

    values = scipy.linalg.eigh(reference, eigvals_only=True, subset_by_index=[d - k - 1, d - 1])[::-1]
    gap = float(values[k - 1] - values[k])
    if gap <= GAP_TOL * max(1.0, abs(float(values[0]))):
        raise DegenerateGapError(gap)
    return 2.0 * float(scipy.linalg.norm(reference - other, 2)) / gap


def _positive_qr(matrix: FloatArray) -> Tuple[FloatArray, FloatArray]:
    q, r = scipy.linalg.qr(matrix, mode="economic")
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs, r * signs[:, None]


def haar_basis(d: int, k: int, rng: Generator) -> Basis:
    """
    Draw a frame from the Haar distribution on d×k orthonormal matrices.

    QR of a standard Gaussian matrix with the diagonal of R forced positive; without the sign
    fix the distribution of Q is not rotation invariant.
    """
    if not 1 <= k < d:
        raise DimensionError(f"Need 1 <= k < d, got k={k}, d={d}")
    q, _ = _positive_qr(rng.standard_normal((d, k)))
    return Basis(entries=q)


def orthonormalize(matrix: npt.ArrayLike) -> Basis:
    """Orthonormal basis for the column span of a full-rank d×k matrix (k < d)."""
    array = np.asarray(matrix, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != 2 or not 1 <= array.shape[1] < array.shape[0]:
        raise DimensionError(f"Expected a d×k matrix with k < d, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise InputError("Matrix has non-finite entries")
    q, r = _positive_qr(array)
    diagonal = np.abs(np.diag(r))
    if diagonal.min() <= 1e-12 * max(1.0, float(diagonal.max())):
        raise RankDeficientError("Columns are linearly dependent; cannot orthonormalize")
    return Basis(entries=q)
