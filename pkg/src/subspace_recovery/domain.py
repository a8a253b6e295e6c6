import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Generic, Iterable, List, Optional, Sequence, TypeVar, Union

import numpy as np

from subspace_recovery.errors import DimensionError, InputError, InsufficientSamplesError
from subspace_recovery.linalg import top_k_eigen
from subspace_recovery.schemas import (
    WEIGHT_SUM_TOL,
    FloatArray,
    GammaProfile,
    LinearDataset,
    NoiseProfile,
    PcaDataset,
    SubspaceEstimate,
    WeightScheme,
)

# Configure logging
logger = logging.getLogger("subspace_recovery")
logger.setLevel(logging.INFO)

# Typical console logger handler
if not logger.handlers:
    ch = logging.StreamHandler()
    ch.setLevel(logging.DEBUG)
    formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    ch.setFormatter(formatter)
    logger.addHandler(ch)

# Above this many samples the aggregate switches to compensated summation
KAHAN_THRESHOLD = 100_000

D = TypeVar("D", PcaDataset, LinearDataset)


def gamma_profile(noise: NoiseProfile, m: Sequence[int], k: int) -> GammaProfile:
    """
    Information scores γ_i = (η²/(σ²m) + η⁴/(σ⁴m²))⁻¹ and the capped scores γ′.

    Users are sorted by γ descending (stable on user index); in that order the first k−1 scores
    are replaced by γ at sorted position k.
    """
    if len(m) != noise.n:
        raise DimensionError(f"Got {noise.n} noise levels but {len(m)} sample counts")
    if not 1 <= k <= noise.n:
        raise DimensionError(f"Need 1 <= k <= n, got k={k}, n={noise.n}")
    etas = np.asarray(noise.etas, dtype=np.float64)
    counts = np.asarray(m, dtype=np.float64)
    if np.any(etas <= 0):
        raise InputError("Information scores need every eta > 0; use uniform weights for noiseless users")
    if np.any(counts < 1):
        raise InputError("Every user needs at least one sample")

    sigma_sq = noise.sigma**2
    gamma = 1.0 / (etas**2 / (sigma_sq * counts) + etas**4 / (sigma_sq**2 * counts**2))
    order = np.argsort(-gamma, kind="stable")
    capped = gamma[order]
    capped[: k - 1] = capped[k - 1]
    gamma_prime = np.empty_like(gamma)
    gamma_prime[order] = capped
    return GammaProfile(
        gamma=gamma.tolist(),
        gamma_prime=gamma_prime.tolist(),
        order=order.tolist(),
        k=k,
    )


def optimal_weights(profile: GammaProfile) -> FloatArray:
    """w_i = γ′_i / Σ γ′, in original user order."""
    gamma_prime = np.asarray(profile.gamma_prime, dtype=np.float64)
    result: FloatArray = gamma_prime / gamma_prime.sum()
    return result


def resolve_weights(
    scheme: WeightScheme,
    m: Sequence[int],
    k: int,
    noise: Optional[NoiseProfile] = None,
) -> FloatArray:
    """
    Bind a weight scheme to n users.

    Raises:
        InputError: If optimal weights are requested without a noise profile, or explicit weights
            do not match the number of users.
    """
    n = len(m)
    if scheme.variant == "uniform":
        return np.full(n, 1.0 / n)
    if scheme.variant == "explicit":
        weights = np.asarray(scheme.weights, dtype=np.float64)
        if weights.shape[0] != n:
            raise InputError(f"Got {weights.shape[0]} explicit weights for {n} users")
        return weights
    if noise is None:
        raise InputError("Optimal weights need sigma and per-user eta")
    return optimal_weights(gamma_profile(noise, m, k))


def _ordered_sum(terms: Iterable[FloatArray], d: int, compensated: bool) -> FloatArray:
    total = np.zeros((d, d))
    if not compensated:
        for term in terms:
            total += term
        return total
    carry = np.zeros((d, d))
    for term in terms:
        adjusted = term - carry
        updated = total + adjusted
        carry = (updated - total) - adjusted
        total = updated
    return total


class WeightedMomentEstimator(Generic[D]):
    """
    Base class for estimators of the form A = Σ_i w_i M_i with one moment matrix per user.

    Subclasses supply the per-user moment; aggregation, user filtering, weight renormalization and
    the top-k eigendecomposition are shared.
    """

    name: str = "weighted-moment"
    min_samples: int = 2

    def __init__(self, workers: int = 1) -> None:
        self.workers = max(1, workers)

    def _block_moment(self, dataset: D, index: int) -> FloatArray:
        raise NotImplementedError("Subclasses must implement _block_moment")

    def user_moment(self, dataset: D, index: int, m: Optional[int] = None) -> FloatArray:
        if m is None:
            m = dataset.sample_counts[index]
        if m < self.min_samples:
            raise InsufficientSamplesError(dataset.user_ids[index], m, self.min_samples)
        return self._block_moment(dataset, index)

    def aggregate(self, dataset: D, weights: Union[Sequence[float], FloatArray]) -> FloatArray:
        """
        Weighted sum of per-user moments, accumulated in ascending user order.

        Users with zero weight are skipped. Per-user moments may be computed concurrently; the
        reduction order never depends on completion order.
        """
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (dataset.n,):
            raise DimensionError(f"Got {w.shape[0] if w.ndim else 0} weights for {dataset.n} users")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InputError("Weights must be finite and nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise InputError(f"Weights must sum to 1, got {float(w.sum())!r}")

        counts = dataset.sample_counts
        included = [index for index in range(dataset.n) if w[index] > 0]
        compensated = sum(counts[index] for index in included) > KAHAN_THRESHOLD

        def weighted_term(index: int) -> FloatArray:
            term: FloatArray = w[index] * self.user_moment(dataset, index, counts[index])
            return term

        if self.workers > 1 and len(included) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                terms = list(executor.map(weighted_term, included))
        else:
            terms = [weighted_term(index) for index in included]
        total = _ordered_sum(terms, dataset.d, compensated)
        result: FloatArray = (total + total.T) / 2.0
        return result

    def estimate_subspace(
        self,
        dataset: D,
        k: int,
        scheme: Optional[WeightScheme] = None,
        noise: Optional[NoiseProfile] = None,
    ) -> SubspaceEstimate:
        """
        Top-k eigenspace of the aggregated moment matrix.

        Users with fewer than `min_samples` samples are dropped with a warning and the remaining
        weights renormalized. A degenerate spectral gap is logged and flagged on the result.

        Raises:
            InputError: If no user is usable or the usable users carry zero total weight.
            DimensionError: If k is outside [1, d).
        """
        scheme = scheme or WeightScheme()
        counts = dataset.sample_counts
        usable = [index for index, m in enumerate(counts) if m >= self.min_samples]
        dropped = [dataset.user_ids[index] for index, m in enumerate(counts) if m < self.min_samples]
        for user_id in dropped:
            logger.warning(f"Dropping user {user_id}: fewer than {self.min_samples} samples")
        if not usable:
            raise InputError(f"No user has at least {self.min_samples} samples")

        if scheme.variant == "explicit":
            partial = np.asarray(scheme.weights, dtype=np.float64)
            if partial.shape[0] != dataset.n:
                raise InputError(f"Got {partial.shape[0]} explicit weights for {dataset.n} users")
            partial = partial[usable]
        else:
            kept_noise = None
            if noise is not None:
                kept_noise = NoiseProfile(sigma=noise.sigma, etas=[noise.etas[index] for index in usable])
            partial = resolve_weights(scheme, [counts[index] for index in usable], k, kept_noise)

        total = float(partial.sum())
        if total <= 0:
            raise InputError("Usable users carry zero total weight")
        weights = np.zeros(dataset.n)
        weights[usable] = partial / total

        try:
            matrix = self.aggregate(dataset, weights)
            eigen = top_k_eigen(matrix, k)
        except Exception as e:
            logger.error(f"Error estimating subspace with {self.name}: {e}")
            raise

        if eigen.degenerate:
            logger.warning(f"Degenerate spectral gap {eigen.gap:.3e} at k={k}; the estimated subspace is not unique")
        logger.debug(
            f"{self.name}: estimated {k}-dim subspace from {len(usable)} users (d={dataset.d}, gap={eigen.gap:.3e})"
        )
        return SubspaceEstimate(
            basis=eigen.vectors,
            eigen=eigen,
            weights=weights,
            dropped_users=dropped,
            matrix=matrix,
        )
