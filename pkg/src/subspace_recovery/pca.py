import math
from typing import List, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt
import scipy.linalg

from subspace_recovery.domain import WeightedMomentEstimator, gamma_profile, logger
from subspace_recovery.errors import (
    DimensionError,
    InputError,
    InsufficientSamplesError,
    RankDeficientError,
    SingularCovarianceError,
)
from subspace_recovery.linalg import BasisLike, as_basis
from subspace_recovery.schemas import (
    Assumption2Check,
    FloatArray,
    GammaProfile,
    NoiseProfile,
    PcaBoundReport,
    PcaDataset,
    SubspaceEstimate,
    WeightScheme,
)

RANK_TOL = 1e-12
BOUNDARY_TOL = 1e-12

Weights = Union[Sequence[float], FloatArray]


def pair_moment(block: npt.ArrayLike, user: str = "0") -> FloatArray:
    """
    Pairwise cross-moment of one user's samples, (1/(m(m−1))) Σ_{j1≠j2} x_j1 x_j2ᵀ.

    Evaluated as (s sᵀ − Σ_j x_j x_jᵀ)/(m(m−1)) with s = Σ_j x_j, so the cost is O(m d²).

    Args:
        block (array-like): m×d matrix of samples.
        user (str): User id reported when the block is too small.

    Returns:
        ndarray: Symmetric d×d matrix.

    Raises:
        InsufficientSamplesError: If m < 2.
    """
    samples = np.array(block, dtype=np.float64, ndmin=2)
    m = samples.shape[0]
    if m < 2:
        raise InsufficientSamplesError(user, m)
    total = samples.sum(axis=0)
    moment = (np.outer(total, total) - samples.T @ samples) / (m * (m - 1))
    result: FloatArray = (moment + moment.T) / 2.0
    return result


class PcaEstimator(WeightedMomentEstimator[PcaDataset]):
    name = "pair-moment PCA"
    min_samples = 2

    def _block_moment(self, dataset: PcaDataset, index: int) -> FloatArray:
        return pair_moment(dataset.users[index], dataset.user_ids[index])


class PcaCovarianceBaseline(WeightedMomentEstimator[PcaDataset]):
    """Single-sample second moment Σ_i w_i (1/m_i) Σ_j x_ij x_ijᵀ; biased by the noise covariance."""

    name = "covariance baseline"
    min_samples = 1

    def _block_moment(self, dataset: PcaDataset, index: int) -> FloatArray:
        samples = dataset.users[index]
        result: FloatArray = samples.T @ samples / samples.shape[0]
        return result


def aggregate(dataset: PcaDataset, weights: Weights, workers: int = 1) -> FloatArray:
    return PcaEstimator(workers=workers).aggregate(dataset, weights)


def estimate_subspace(
    dataset: PcaDataset,
    k: int,
    weights: Optional[WeightScheme] = None,
    noise: Optional[NoiseProfile] = None,
    workers: int = 1,
) -> SubspaceEstimate:
    return PcaEstimator(workers=workers).estimate_subspace(dataset, k, weights, noise)


def _check_delta(delta: float, upper: float = 0.5) -> None:
    if not 0.0 < delta < upper:
        raise InputError(f"delta must lie in (0, {upper}), got {delta}")


def check_assumption2(profile: GammaProfile, delta: float, c_star: float = 4.0) -> Assumption2Check:
    """
    Σ γ′ ≥ C_*(k + log(1/δ)) γ′_1, evaluated together with its tail form
    Σ_{i>k} γ_i ≥ ((C_*−1)k + C_* log(1/δ)) γ_k. Margins are LHS/RHS − 1.
    """
    _check_delta(delta)
    if c_star < 1:
        raise InputError(f"c_star must be at least 1, got {c_star}")
    k = profile.k
    log_term = math.log(1.0 / delta)
    sorted_gamma = profile.sorted_gamma
    sorted_prime = profile.sorted_gamma_prime

    margin = math.fsum(sorted_prime) / (c_star * (k + log_term) * sorted_prime[0]) - 1.0
    tail = math.fsum(sorted_gamma[k:])
    equivalent_margin = tail / (((c_star - 1.0) * k + c_star * log_term) * sorted_gamma[k - 1]) - 1.0
    return Assumption2Check(holds=margin >= -BOUNDARY_TOL, margin=margin, equivalent_margin=equivalent_margin)


def signal_spectrum(means: npt.ArrayLike, weights: Weights) -> FloatArray:
    """Eigenvalues of Σ_i w_i μ_i μ_iᵀ, descending."""
    vectors = np.array(means, dtype=np.float64, ndmin=2)
    w = np.asarray(weights, dtype=np.float64)
    if vectors.shape[0] != w.shape[0]:
        raise DimensionError(f"Got {vectors.shape[0]} means for {w.shape[0]} weights")
    matrix = (vectors.T * w) @ vectors
    values: FloatArray = scipy.linalg.eigvalsh((matrix + matrix.T) / 2.0)[::-1]
    return values


def _sigma_k_sq(spectrum: FloatArray, k: int) -> float:
    if not 1 <= k < spectrum.shape[0]:
        raise DimensionError(f"Need 1 <= k < d, got k={k}, d={spectrum.shape[0]}")
    value = float(spectrum[k - 1])
    if value <= RANK_TOL * max(1.0, float(spectrum[0])):
        raise RankDeficientError(f"The {k}-th signal eigenvalue is {value:.3e}; the bound is undefined")
    return value


def _xi_squared(means: FloatArray, weights: FloatArray, etas: FloatArray, m: FloatArray) -> float:
    scale = weights**2 * etas**2 / m
    matrix = (means.T * scale) @ means
    return float(scipy.linalg.eigvalsh((matrix + matrix.T) / 2.0)[-1])


def upper_bound_general(
    means: npt.ArrayLike,
    weights: Weights,
    etas: Sequence[float],
    m: Sequence[int],
    k: int,
    d: int,
    delta: float,
    constant: float = 1.0,
) -> float:
    """
    Error bound for arbitrary weights:

        C · [ σ_k⁻² √((d+log(1/δ))(ξ² + Σ w_i² η_i⁴/m_i²)) + σ_k⁻² (d+log(1/δ)) max_i w_i η_i²/m_i ]

    with ξ² = ‖Σ w_i² μ_i μ_iᵀ η_i²/m_i‖ and σ_k² the k-th eigenvalue of Σ w_i μ_i μ_iᵀ.

    Raises:
        RankDeficientError: If σ_k² is zero.
    """
    _check_delta(delta, upper=1.0)
    vectors = np.array(means, dtype=np.float64, ndmin=2)
    w = np.asarray(weights, dtype=np.float64)
    eta = np.asarray(etas, dtype=np.float64)
    counts = np.asarray(m, dtype=np.float64)
    if not vectors.shape[0] == w.shape[0] == eta.shape[0] == counts.shape[0]:
        raise DimensionError("Means, weights, etas and sample counts must have one entry per user")
    if vectors.shape[1] != d:
        raise DimensionError(f"Means have dimension {vectors.shape[1]}, expected {d}")

    sigma_k_sq = _sigma_k_sq(signal_spectrum(vectors, w), k)
    complexity = d + math.log(1.0 / delta)
    xi_sq = _xi_squared(vectors, w, eta, counts)
    noise_sum = float(np.sum(w**2 * eta**4 / counts**2))
    worst = float(np.max(w * eta**2 / counts))
    value = math.sqrt(complexity * (xi_sq + noise_sum)) / sigma_k_sq + complexity * worst / sigma_k_sq
    return constant * value


def upper_bound_corollary(
    t: float,
    sigma_1: float,
    sigma_k_sq: float,
    n: int,
    d: int,
    delta: float,
    constant: float = 1.0,
) -> float:
    """Uniform-weight form (tσ_1 + t²)/σ_k² · √((d+log(1/δ))/n) with t = max_i η_i/√m_i."""
    _check_delta(delta, upper=1.0)
    if sigma_k_sq <= 0:
        raise RankDeficientError()
    return constant * (t * sigma_1 + t**2) / sigma_k_sq * math.sqrt((d + math.log(1.0 / delta)) / n)


def upper_bound_weighted(profile: GammaProfile, d: int, delta: float, constant: float = 1.0) -> float:
    """C · √((d+log(1/δ))/Σγ′), the bound attained by the information-optimal weights."""
    _check_delta(delta)
    return constant * math.sqrt((d + math.log(1.0 / delta)) / math.fsum(profile.gamma_prime))


def lower_bound(d: int, k: int, delta: float, gamma: Sequence[float], constant: float = 1.0) -> float:
    """
    Minimax lower bound C · min{1, √((d−k)(1−δ)/Σ_{i≥k} γ_(i))} over γ sorted descending.

    The sum starts at sorted position k, leaving out the k−1 most informative users.
    """
    if not 0.0 <= delta <= 0.5:
        raise InputError(f"delta must lie in [0, 0.5], got {delta}")
    if not 1 <= k < d:
        raise DimensionError(f"Need 1 <= k < d, got k={k}, d={d}")
    if k > len(gamma):
        raise DimensionError(f"Need k <= n, got k={k}, n={len(gamma)}")
    tail = math.fsum(sorted(gamma, reverse=True)[k - 1 :])
    if tail <= 0:
        return constant
    return constant * min(1.0, math.sqrt((d - k) * (1.0 - delta) / tail))


def signal_weight_cap(k: int, delta: float, c_star: float = 4.0) -> float:
    """Largest per-user weight under which σ_k² ≥ σ²/2 holds with probability 1−δ for Gaussian means."""
    _check_delta(delta)
    return 1.0 / (c_star * (k + math.log(1.0 / delta)))


def bound_report(
    means: npt.ArrayLike,
    weights: Weights,
    sigma: float,
    etas: Sequence[float],
    m: Sequence[int],
    k: int,
    delta: float,
    constant: float = 1.0,
    c_star: float = 4.0,
) -> PcaBoundReport:
    """
    All bound quantities for one synthetic configuration.

    The weighted bound, the lower bound and the Assumption 2 check need information scores and
    are left empty when some η_i is zero.
    """
    vectors = np.array(means, dtype=np.float64, ndmin=2)
    w = np.asarray(weights, dtype=np.float64)
    d = vectors.shape[1]
    spectrum = signal_spectrum(vectors, w)
    sigma_k_sq = _sigma_k_sq(spectrum, k)
    xi = math.sqrt(max(0.0, _xi_squared(vectors, w, np.asarray(etas, float), np.asarray(m, float))))
    upper_general = upper_bound_general(vectors, w, etas, m, k, d, delta, constant)

    upper_weighted: Optional[float] = None
    lower: Optional[float] = None
    assumption2: Optional[Assumption2Check] = None
    if min(etas) > 0 and k <= len(etas):
        profile = gamma_profile(NoiseProfile(sigma=sigma, etas=list(etas)), m, k)
        upper_weighted = upper_bound_weighted(profile, d, delta, constant)
        lower = lower_bound(d, k, delta, profile.gamma, constant)
        assumption2 = check_assumption2(profile, delta, c_star)
        if not assumption2.holds:
            logger.warning(
                f"Assumption 2 fails (margin {assumption2.margin:.3f}); the weighted guarantee does not apply"
            )

    return PcaBoundReport(
        sigma_k_sq=sigma_k_sq,
        sigma_1_sq=float(spectrum[0]),
        xi=xi,
        delta=delta,
        upper_general=upper_general,
        upper_weighted=upper_weighted,
        lower=lower,
        constant_c=constant,
        assumption2=assumption2,
        weighted_guarantee_void=assumption2 is not None and not assumption2.holds,
    )


def gaussian_kl(cov_p: npt.ArrayLike, cov_q: npt.ArrayLike) -> float:
    """
    KL(N(0, P) ‖ N(0, Q)) = ½ (tr(Q⁻¹P) − d + log det Q − log det P).

    Raises:
        SingularCovarianceError: If either covariance is not positive definite.
    """
    p = np.asarray(cov_p, dtype=np.float64)
    q = np.asarray(cov_q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise DimensionError(f"Covariances must be square and of equal shape, got {p.shape} and {q.shape}")
    try:
        factor = scipy.linalg.cho_factor(q)
        scipy.linalg.cho_factor(p)
    except np.linalg.LinAlgError as e:
        raise SingularCovarianceError(f"Covariance is not positive definite: {e}")
    _, logdet_p = np.linalg.slogdet(p)
    _, logdet_q = np.linalg.slogdet(q)
    trace = float(np.trace(scipy.linalg.cho_solve(factor, p)))
    return 0.5 * (trace - p.shape[0] + float(logdet_q) - float(logdet_p))


def kl_structured_gaussians(sigma: float, eta: float, first: BasisLike, second: BasisLike) -> float:
    """KL between N(0, σ²UUᵀ + η²I) and N(0, σ²ÛÛᵀ + η²I): σ⁴‖UUᵀ − ÛÛᵀ‖_F² / (4(σ²η² + η⁴))."""
    if eta <= 0:
        raise SingularCovarianceError()
    b1, b2 = as_basis(first), as_basis(second)
    if b1.d != b2.d or b1.k != b2.k:
        raise DimensionError(f"Bases differ in shape: {b1.d}×{b1.k} versus {b2.d}×{b2.k}")
    distance_sq = float(np.linalg.norm(b1.projector() - b2.projector(), "fro") ** 2)
    return sigma**4 * distance_sq / (4.0 * (sigma**2 * eta**2 + eta**4))


def estimate_noise_levels(dataset: PcaDataset) -> List[float]:
    """
    Heuristic per-user η_i: √(Σ_j ‖x_ij − x̄_i‖² / ((m_i − 1) d)).

    Users with a single sample get NaN. This assumes roughly isotropic noise and carries no
    recovery guarantee.
    """
    levels: List[float] = []
    for user_id, block in zip(dataset.user_ids, dataset.users):
        m = block.shape[0]
        if m < 2:
            logger.warning(f"Cannot estimate the noise level of user {user_id} from one sample")
            levels.append(float("nan"))
            continue
        deviation = block - block.mean(axis=0)
        levels.append(math.sqrt(float(np.sum(deviation**2)) / ((m - 1) * dataset.d)))
    return levels
