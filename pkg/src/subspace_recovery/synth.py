from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.random import Generator

from subspace_recovery.errors import DimensionError, InputError
from subspace_recovery.linalg import haar_basis
from subspace_recovery.schemas import (
    LINEAR_NOISE_KINDS,
    PCA_NOISE_KINDS,
    FloatArray,
    GroundTruth,
    LinearDataset,
    MeanFamily,
    MeasurementKind,
    NoiseSpec,
    PcaDataset,
)
from subspace_recovery.utils import RandomStreams, expand_pattern

DIAGONAL_FLOOR = 0.1


def _check_dims(d: int, k: int, m: Sequence[int]) -> None:
    if not 1 <= k < d:
        raise DimensionError(f"Need 1 <= k < d, got k={k}, d={d}")
    if not m:
        raise InputError("At least one user is required")
    if min(m) < 1:
        raise InputError("Every user needs at least one sample")


def _complement(samples: FloatArray, basis: FloatArray) -> FloatArray:
    """Project rows onto the orthogonal complement of span(basis)."""
    result: FloatArray = samples - (samples @ basis) @ basis.T
    return result


def _subspace_vector(basis: FloatArray, sigma: float, family: MeanFamily, rng: Generator) -> FloatArray:
    k = basis.shape[1]
    if family == "gaussian":
        coords = rng.standard_normal(k)
    else:
        coords = rng.integers(0, 2, size=k) * 2.0 - 1.0
    result: FloatArray = sigma * (basis @ coords)
    return result


def _pca_noise(
    spec: NoiseSpec,
    eta: float,
    m: int,
    basis: FloatArray,
    sigma: float,
    rng: Generator,
) -> FloatArray:
    d = basis.shape[0]
    if spec.kind == "spherical":
        result: FloatArray = eta * rng.standard_normal((m, d))
        return result
    if spec.kind == "diagonal":
        profile = rng.uniform(DIAGONAL_FLOOR, 1.0, size=d)
        profile /= profile.max()
        result = eta * rng.standard_normal((m, d)) * profile
        return result
    # complement: N(0, s²(I − UUᵀ) + α²I), no second-moment information about span(U)
    scale = spec.scale if spec.scale is not None else sigma
    result = scale * _complement(rng.standard_normal((m, d)), basis) + spec.alpha * rng.standard_normal((m, d))
    return result


def gen_pca(
    d: int,
    k: int,
    m: Sequence[int],
    sigma: float,
    noise: NoiseSpec,
    streams: RandomStreams,
    mean_family: MeanFamily = "gaussian",
) -> Tuple[PcaDataset, GroundTruth]:
    """
    Synthetic PCA data x_ij = μ_i + z_ij with a Haar-random hidden subspace.

    Means are σUg with g standard Gaussian, or σUρ with ρ uniform on {−1, +1}^k. Each user draws
    from its own streams, so the result depends only on the arguments and the stream seed.

    Args:
        d (int): Ambient dimension.
        k (int): Subspace dimension.
        m (sequence of int): Samples per user; its length is the number of users.
        sigma (float): Signal scale.
        noise (NoiseSpec): Noise construction; etas are cycled over users.
        streams (RandomStreams): Random streams of the trial.
        mean_family (str): "gaussian" or "rademacher".

    Returns:
        tuple: The dataset and its ground truth.

    Raises:
        InputError: If the noise kind belongs to the linear setting.
    """
    _check_dims(d, k, m)
    if noise.kind not in PCA_NOISE_KINDS:
        raise InputError(f"Noise '{noise.kind}' is not available for PCA data: use one of {PCA_NOISE_KINDS}")
    n = len(m)
    etas = expand_pattern(noise.etas, n)
    basis = haar_basis(d, k, streams.basis())
    u = basis.entries

    means = np.empty((n, d))
    blocks: List[FloatArray] = []
    for user in range(n):
        means[user] = _subspace_vector(u, sigma, mean_family, streams.means(user))
        blocks.append(means[user] + _pca_noise(noise, etas[user], m[user], u, sigma, streams.noise(user)))

    dataset = PcaDataset(users=blocks, d=d)
    truth = GroundTruth(basis=basis, means=means, sigma=sigma, etas=etas)
    return dataset, truth


def _measurements(kind: MeasurementKind, m: int, d: int, rng: Generator) -> FloatArray:
    if kind == "rademacher":
        signs: FloatArray = rng.integers(0, 2, size=(m, d)) * 2.0 - 1.0
        return signs
    gaussian: FloatArray = rng.standard_normal((m, d))
    return gaussian


def gen_linear(
    d: int,
    k: int,
    m: Sequence[int],
    sigma: float,
    noise: NoiseSpec,
    streams: RandomStreams,
    r_cap: Optional[float] = None,
    measurement: MeasurementKind = "rademacher",
) -> Tuple[LinearDataset, GroundTruth]:
    """
    Synthetic linear-model data y_ij = x_ijᵀβ_i + z_ij.

    Coefficients are σUg, rescaled onto the ball of radius `r_cap` when they exceed it.
    Independent noise is η_i times a standard normal. Measurement-dependent noise is z_ij = x_ijᵀν_ij
    with ν_ij ~ N(0, s²(I − UUᵀ)), s = noise.scale or σ; with s = σ, β_i + ν_ij is N(0, σ²I)
    and a single sample per user carries no information about span(U).
    """
    _check_dims(d, k, m)
    if noise.kind not in LINEAR_NOISE_KINDS:
        raise InputError(f"Noise '{noise.kind}' is not available for linear data: use one of {LINEAR_NOISE_KINDS}")
    n = len(m)
    etas = expand_pattern(noise.etas, n)
    basis = haar_basis(d, k, streams.basis())
    u = basis.entries
    scale = noise.scale if noise.scale is not None else sigma

    coeffs = np.empty((n, d))
    features: List[FloatArray] = []
    responses: List[FloatArray] = []
    for user in range(n):
        beta = _subspace_vector(u, sigma, "gaussian", streams.means(user))
        norm = float(np.linalg.norm(beta))
        if r_cap is not None and norm > r_cap:
            beta = beta * (r_cap / norm)
        coeffs[user] = beta

        x = _measurements(measurement, m[user], d, streams.measurement(user))
        rng = streams.noise(user)
        if noise.kind == "independent":
            z = etas[user] * rng.standard_normal(m[user])
        else:
            nu = scale * _complement(rng.standard_normal((m[user], d)), u)
            z = np.einsum("ij,ij->i", x, nu)
        features.append(x)
        responses.append(x @ beta + z)

    dataset = LinearDataset(features=features, responses=responses, d=d)
    truth = GroundTruth(basis=basis, coeffs=coeffs, sigma=sigma, r=r_cap, etas=etas)
    return dataset, truth
