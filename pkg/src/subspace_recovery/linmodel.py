import math
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt

from subspace_recovery.domain import WeightedMomentEstimator
from subspace_recovery.errors import DimensionError, InputError, RankDeficientError
from subspace_recovery.pca import RANK_TOL, pair_moment, signal_spectrum
from subspace_recovery.schemas import FloatArray, LinearBoundReport, LinearDataset, SubspaceEstimate, WeightScheme


def score_pair_moment(features: npt.ArrayLike, responses: npt.ArrayLike, user: str = "0") -> FloatArray:
    """
    Pairwise cross-moment of the score vectors x_j y_j of one user.

    Raises:
        InsufficientSamplesError: If the user has fewer than two samples.
    """
    x = np.array(features, dtype=np.float64, ndmin=2)
    y = np.asarray(responses, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise DimensionError(f"User {user}: {x.shape[0]} feature rows but {y.shape[0]} responses")
    return pair_moment(x * y[:, None], user)


class LinearEstimator(WeightedMomentEstimator[LinearDataset]):
    name = "pair-moment linear"
    min_samples = 2

    def _block_moment(self, dataset: LinearDataset, index: int) -> FloatArray:
        return score_pair_moment(dataset.features[index], dataset.responses[index], dataset.user_ids[index])


class LinearCovarianceBaseline(WeightedMomentEstimator[LinearDataset]):
    """Naive estimator Σ_i w_i (1/m_i) Σ_j (x_ij y_ij)(x_ij y_ij)ᵀ; usable with one sample per user."""

    name = "score covariance baseline"
    min_samples = 1

    def _block_moment(self, dataset: LinearDataset, index: int) -> FloatArray:
        scores = dataset.scores(index)
        result: FloatArray = scores.T @ scores / scores.shape[0]
        return result


def estimate_subspace_linear(
    dataset: LinearDataset,
    k: int,
    weights: Optional[WeightScheme] = None,
    workers: int = 1,
) -> SubspaceEstimate:
    return LinearEstimator(workers=workers).estimate_subspace(dataset, k, weights)


def _log_factor(n: int, d: int, delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise InputError(f"delta must lie in (0, 1), got {delta}")
    return math.log(n * d / delta) ** 3


def linear_upper_bound(
    sigma_k_sq: float,
    r: float,
    eta: float,
    m: int,
    n: int,
    d: int,
    delta: float,
    constant: float = 1.0,
) -> float:
    """C · log³(nd/δ) · √(d(r⁴ + r²η² + η⁴/m)/(m n σ_k⁴))."""
    if sigma_k_sq <= 0:
        raise RankDeficientError()
    bracket = r**4 + r**2 * eta**2 + eta**4 / m
    return constant * _log_factor(n, d, delta) * math.sqrt(d * bracket / (m * n * sigma_k_sq**2))


def linear_upper_bound_averaged(
    coeffs: npt.ArrayLike,
    eta: float,
    m: int,
    k: int,
    delta: float,
    constant: float = 1.0,
) -> float:
    """
    Per-user averaged form of the linear-model bound:

        C · log³(nd/δ) · ( √(d(mean‖β‖⁴ + η² mean‖β‖² + η⁴/m)/(m n σ_k⁴)) + d max‖β‖²/(m n σ_k²) )

    with σ_k² the k-th eigenvalue of (1/n) Σ β_i β_iᵀ.
    """
    vectors = np.array(coeffs, dtype=np.float64, ndmin=2)
    n, d = vectors.shape
    spectrum = signal_spectrum(vectors, np.full(n, 1.0 / n))
    if not 1 <= k < d:
        raise DimensionError(f"Need 1 <= k < d, got k={k}, d={d}")
    sigma_k_sq = float(spectrum[k - 1])
    if sigma_k_sq <= RANK_TOL * max(1.0, float(spectrum[0])):
        raise RankDeficientError()
    norms_sq = np.sum(vectors**2, axis=1)
    bracket = float(np.mean(norms_sq**2)) + eta**2 * float(np.mean(norms_sq)) + eta**4 / m
    first = math.sqrt(d * bracket / (m * n * sigma_k_sq**2))
    second = d * float(norms_sq.max()) / (m * n * sigma_k_sq)
    return constant * _log_factor(n, d, delta) * (first + second)


def linear_bound_report(
    coeffs: npt.ArrayLike,
    etas: Sequence[float],
    m: Sequence[int],
    k: int,
    delta: float,
    constant: float = 1.0,
) -> LinearBoundReport:
    """Bound inputs for the linear setting: worst-case η, smallest m and r = max‖β_i‖."""
    vectors = np.array(coeffs, dtype=np.float64, ndmin=2)
    n, d = vectors.shape
    if len(etas) != n or len(m) != n:
        raise DimensionError("Coefficients, etas and sample counts must have one entry per user")
    spectrum = signal_spectrum(vectors, np.full(n, 1.0 / n))
    if not 1 <= k < d:
        raise DimensionError(f"Need 1 <= k < d, got k={k}, d={d}")
    sigma_k_sq = float(spectrum[k - 1])
    r = float(np.linalg.norm(vectors, axis=1).max())
    eta = float(max(etas))
    m_min = int(min(m))
    return LinearBoundReport(
        sigma_k_sq=max(0.0, sigma_k_sq),
        r=r,
        eta=eta,
        m=m_min,
        n=n,
        d=d,
        delta=delta,
        bound=linear_upper_bound(sigma_k_sq, r, eta, m_min, n, d, delta, constant),
        bound_averaged=linear_upper_bound_averaged(vectors, eta, m_min, k, delta, constant),
        constant_c=constant,
    )
