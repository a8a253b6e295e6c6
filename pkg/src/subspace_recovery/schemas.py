import os
from itertools import product
from typing import Annotated, Any, Dict, List, Literal, Optional

import numpy as np
import numpy.typing as npt
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    field_serializer,
    field_validator,
    model_validator,
)

from subspace_recovery.utils import expand_pattern

FloatArray = npt.NDArray[np.float64]

ORTHONORMAL_TOL = 1e-10
WEIGHT_SUM_TOL = 1e-12
GAP_TOL = 1e-12

SettingName = Literal["pca", "linear"]
NoiseKind = Literal["spherical", "diagonal", "complement", "independent", "measurement"]
WeightVariant = Literal["uniform", "optimal", "explicit"]
MeanFamily = Literal["gaussian", "rademacher"]
MeasurementKind = Literal["rademacher", "gaussian"]
EstimatorKind = Literal["pair", "single"]

PCA_NOISE_KINDS = ("spherical", "diagonal", "complement")
LINEAR_NOISE_KINDS = ("independent", "measurement")


def _readonly(array: FloatArray) -> FloatArray:
    array.setflags(write=False)
    return array


def _split_list(value: Any) -> Any:
    """Accept "a, b, c" strings and scalars wherever a list is expected."""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [value]
    return value


class Basis(BaseModel):
    """Orthonormal d×k frame spanning a proper subspace of R^d."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    entries: np.ndarray

    @field_validator("entries", mode="before")
    @classmethod
    def _check_orthonormal(cls, value: Any) -> FloatArray:
        entries = np.array(value, dtype=np.float64)
        if entries.ndim == 1:
            entries = entries.reshape(-1, 1)
        if entries.ndim != 2:
            raise ValueError(f"Basis entries must be a matrix, got {entries.ndim} dimensions")
        d, k = entries.shape
        if not 1 <= k < d:
            raise ValueError(f"Basis requires 1 <= k < d, got d={d}, k={k}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("Basis entries must be finite")
        deviation = float(np.abs(entries.T @ entries - np.eye(k)).max())
        if deviation > ORTHONORMAL_TOL:
            raise ValueError(f"Basis columns are not orthonormal (max deviation {deviation:.3e})")
        return _readonly(entries)

    @property
    def d(self) -> int:
        return int(self.entries.shape[0])

    @property
    def k(self) -> int:
        return int(self.entries.shape[1])

    def projector(self) -> FloatArray:
        result: FloatArray = self.entries @ self.entries.T
        return result

    @field_serializer("entries")
    def _serialize_entries(self, entries: FloatArray) -> List[List[float]]:
        return [[float(value) for value in row] for row in entries]


class EigenResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    vectors: Basis
    gap: float

    @field_validator("values", mode="before")
    @classmethod
    def _coerce_values(cls, value: Any) -> FloatArray:
        return _readonly(np.array(value, dtype=np.float64).reshape(-1))

    @model_validator(mode="after")
    def _check_sorted(self) -> "EigenResult":
        if self.values.shape[0] != self.vectors.k:
            raise ValueError("One eigenvalue is required per basis vector")
        if np.any(np.diff(self.values) > GAP_TOL * max(1.0, float(np.abs(self.values).max()))):
            raise ValueError("Eigenvalues must be sorted in descending order")
        return self

    @property
    def degenerate(self) -> bool:
        return self.gap <= GAP_TOL * max(1.0, float(np.abs(self.values).max()))

    @field_serializer("values")
    def _serialize_values(self, values: FloatArray) -> List[float]:
        return [float(value) for value in values]


class PcaDataset(BaseModel):
    """Per-user sample blocks x_ij in R^d; block i is an m_i × d matrix."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    users: List[np.ndarray]
    user_ids: List[str]
    d: PositiveInt

    @model_validator(mode="before")
    @classmethod
    def _coerce_blocks(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            data["users"] = [np.array(block, dtype=np.float64, ndmin=2) for block in data.get("users", [])]
            if not data.get("user_ids"):
                data["user_ids"] = [str(index) for index in range(len(data["users"]))]
        return data

    @model_validator(mode="after")
    def _check_blocks(self) -> "PcaDataset":
        if len(self.user_ids) != len(self.users):
            raise ValueError("One user id is required per block")
        if len(set(self.user_ids)) != len(self.user_ids):
            raise ValueError("User ids must be unique")
        for user_id, block in zip(self.user_ids, self.users):
            if block.ndim != 2 or block.shape[1] != self.d:
                raise ValueError(f"User {user_id}: expected samples of dimension {self.d}, got shape {block.shape}")
            if block.shape[0] < 1:
                raise ValueError(f"User {user_id} has no samples")
            if not np.all(np.isfinite(block)):
                raise ValueError(f"User {user_id} has non-finite entries")
        return self

    @property
    def n(self) -> int:
        return len(self.users)

    @property
    def sample_counts(self) -> List[int]:
        return [int(block.shape[0]) for block in self.users]


class LinearDataset(BaseModel):
    """Per-user pairs (x_ij, y_ij): features block m_i × d and responses of length m_i."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: List[np.ndarray]
    responses: List[np.ndarray]
    user_ids: List[str]
    d: PositiveInt

    @model_validator(mode="before")
    @classmethod
    def _coerce_blocks(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            data["features"] = [np.array(block, dtype=np.float64, ndmin=2) for block in data.get("features", [])]
            data["responses"] = [np.array(y, dtype=np.float64).reshape(-1) for y in data.get("responses", [])]
            if not data.get("user_ids"):
                data["user_ids"] = [str(index) for index in range(len(data["features"]))]
        return data

    @model_validator(mode="after")
    def _check_blocks(self) -> "LinearDataset":
        if not len(self.features) == len(self.responses) == len(self.user_ids):
            raise ValueError("Features, responses and user ids must have one entry per user")
        if len(set(self.user_ids)) != len(self.user_ids):
            raise ValueError("User ids must be unique")
        for user_id, block, y in zip(self.user_ids, self.features, self.responses):
            if block.ndim != 2 or block.shape[1] != self.d:
                raise ValueError(f"User {user_id}: expected features of dimension {self.d}, got shape {block.shape}")
            if block.shape[0] < 1 or y.shape[0] != block.shape[0]:
                raise ValueError(f"User {user_id}: {block.shape[0]} feature rows but {y.shape[0]} responses")
            if not (np.all(np.isfinite(block)) and np.all(np.isfinite(y))):
                raise ValueError(f"User {user_id} has non-finite entries")
        return self

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def sample_counts(self) -> List[int]:
        return [int(block.shape[0]) for block in self.features]

    def scores(self, index: int) -> FloatArray:
        """Per-sample score vectors x_ij * y_ij of one user."""
        result: FloatArray = self.features[index] * self.responses[index][:, None]
        return result


class NoiseProfile(BaseModel):
    # eta_i = 0 is representable (noiseless evaluation); gamma_profile rejects it
    sigma: PositiveFloat
    etas: List[NonNegativeFloat]

    @property
    def n(self) -> int:
        return len(self.etas)


class GammaProfile(BaseModel):
    """Information scores in original user order plus the descending sort permutation."""

    gamma: List[float]
    gamma_prime: List[float]
    order: List[int]
    k: PositiveInt

    @property
    def sorted_gamma(self) -> List[float]:
        return [self.gamma[index] for index in self.order]

    @property
    def sorted_gamma_prime(self) -> List[float]:
        return [self.gamma_prime[index] for index in self.order]


class WeightScheme(BaseModel):
    variant: WeightVariant = "uniform"
    weights: Optional[List[NonNegativeFloat]] = None

    @model_validator(mode="after")
    def _check_explicit(self) -> "WeightScheme":
        if self.variant == "explicit":
            if not self.weights:
                raise ValueError("Explicit weight scheme requires a weight list")
            if abs(sum(self.weights) - 1.0) > WEIGHT_SUM_TOL:
                raise ValueError(f"Explicit weights must sum to 1, got {sum(self.weights)!r}")
        return self


class Assumption2Check(BaseModel):
    holds: bool
    margin: float
    equivalent_margin: float


class PcaBoundReport(BaseModel):
    sigma_k_sq: NonNegativeFloat
    sigma_1_sq: NonNegativeFloat
    xi: NonNegativeFloat
    delta: float
    upper_general: NonNegativeFloat
    upper_weighted: Optional[NonNegativeFloat] = None
    lower: Optional[NonNegativeFloat] = None
    constant_c: PositiveFloat = 1.0
    assumption2: Optional[Assumption2Check] = None
    weighted_guarantee_void: bool = False


class LinearBoundReport(BaseModel):
    sigma_k_sq: NonNegativeFloat
    r: NonNegativeFloat
    eta: NonNegativeFloat
    m: PositiveInt
    n: PositiveInt
    d: PositiveInt
    delta: float
    bound: NonNegativeFloat
    bound_averaged: NonNegativeFloat
    constant_c: PositiveFloat = 1.0


class SubspaceEstimate(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    basis: Basis
    eigen: EigenResult
    weights: np.ndarray
    dropped_users: List[str] = Field(default_factory=list)
    matrix: np.ndarray = Field(exclude=True)

    @property
    def degenerate_gap(self) -> bool:
        return self.eigen.degenerate

    @field_serializer("weights")
    def _serialize_weights(self, weights: FloatArray) -> List[float]:
        return [float(value) for value in weights]


class NoiseSpec(BaseModel):
    """Noise construction for synthetic data; etas are already expanded to one value per user."""

    kind: NoiseKind = "spherical"
    etas: List[NonNegativeFloat] = Field(default_factory=lambda: [1.0])
    alpha: NonNegativeFloat = 0.0
    scale: Optional[PositiveFloat] = None


class GroundTruth(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    basis: Basis
    means: Optional[np.ndarray] = None
    coeffs: Optional[np.ndarray] = None
    sigma: PositiveFloat
    r: Optional[PositiveFloat] = None
    etas: List[NonNegativeFloat]

    @model_validator(mode="after")
    def _check_containment(self) -> "GroundTruth":
        for name in ("means", "coeffs"):
            vectors = getattr(self, name)
            if vectors is None:
                continue
            residual = vectors - (vectors @ self.basis.entries) @ self.basis.entries.T
            scale = max(1.0, float(np.abs(vectors).max(initial=0.0)))
            if float(np.abs(residual).max(initial=0.0)) > 1e-10 * scale:
                raise ValueError(f"Ground-truth {name} leave the hidden subspace")
        if self.r is not None and self.coeffs is not None:
            if float(np.linalg.norm(self.coeffs, axis=1).max(initial=0.0)) > self.r * (1 + 1e-12):
                raise ValueError("Coefficient norm exceeds the cap r")
        return self

    @property
    def vectors(self) -> FloatArray:
        result = self.means if self.means is not None else self.coeffs
        if result is None:
            raise ValueError("Ground truth carries neither means nor coefficients")
        return np.asarray(result, dtype=np.float64)


class GridPoint(BaseModel):
    n: PositiveInt
    m_pattern: List[PositiveInt]
    weights: WeightVariant

    @property
    def m_label(self) -> str:
        return "|".join(str(m) for m in self.m_pattern)

    def sample_counts(self) -> List[int]:
        return expand_pattern(self.m_pattern, self.n)


class ExperimentConfig(BaseModel):
    setting: SettingName = "pca"
    d: PositiveInt = 20
    k: PositiveInt = 2
    n: List[PositiveInt] = Field(default_factory=lambda: [1000])
    m: List[PositiveInt] = Field(default_factory=lambda: [2])
    m_pattern: Optional[List[PositiveInt]] = None
    sigma: PositiveFloat = 1.0
    noise: NoiseKind = "spherical"
    etas: List[NonNegativeFloat] = Field(default_factory=lambda: [1.0])
    alpha: NonNegativeFloat = 1.0
    noise_scale: Optional[PositiveFloat] = None
    mean_family: MeanFamily = "gaussian"
    measurement: MeasurementKind = "rademacher"
    r_cap: Optional[PositiveFloat] = None
    weights: List[Literal["uniform", "optimal"]] = Field(default_factory=lambda: ["uniform"])
    estimator: EstimatorKind = "pair"
    delta: Annotated[float, Field(gt=0.0, lt=0.5)] = 0.05
    trials: PositiveInt = 20
    seed: Annotated[int, Field(ge=0, le=2**64 - 1)] = 0
    bound_constant: PositiveFloat = 1.0
    c_star: Annotated[float, Field(ge=1.0)] = 4.0
    workers: PositiveInt = Field(default_factory=lambda: int(os.environ.get("SUBSPACE_RECOVERY_WORKERS", "1")))
    record_timing: bool = False
    output: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _default_noise_for_setting(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("noise") is None:
            data = dict(data)
            data["noise"] = "independent" if data.get("setting") == "linear" else "spherical"
        return data

    @field_validator("n", "m", "m_pattern", "etas", "weights", mode="before")
    @classmethod
    def _accept_comma_lists(cls, value: Any) -> Any:
        return _split_list(value)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if not self.k < self.d:
            raise ValueError(f"k must be smaller than d (k={self.k}, d={self.d})")
        if not self.n or not self.m or not self.etas or not self.weights:
            raise ValueError("Sweep lists must be nonempty")
        if min(self.n) < self.k:
            raise ValueError(f"Every n must be at least k={self.k}")
        allowed = PCA_NOISE_KINDS if self.setting == "pca" else LINEAR_NOISE_KINDS
        if self.noise not in allowed:
            raise ValueError(f"Noise '{self.noise}' is not available for {self.setting}: use one of {allowed}")
        if self.setting == "linear" and self.weights != ["uniform"]:
            raise ValueError("Information-optimal weights are defined for the pca setting only")
        return self

    def grid_points(self) -> List[GridPoint]:
        patterns = [self.m_pattern] if self.m_pattern else [[m] for m in self.m]
        return [
            GridPoint(n=n, m_pattern=pattern, weights=weights)
            for n, pattern, weights in product(self.n, patterns, self.weights)
        ]

    def etas_for(self, n: int) -> List[float]:
        return expand_pattern(self.etas, n)

    @property
    def eta_summary(self) -> str:
        return "|".join(f"{eta:g}" for eta in self.etas)


class TrialResult(BaseModel):
    trial_index: int
    seed: int
    sin_theta: Optional[Annotated[float, Field(ge=0.0, le=1.0)]] = None
    gap: Optional[float] = None
    upper_general: Optional[float] = None
    upper_weighted: Optional[float] = None
    lower: Optional[float] = None
    davis_kahan: Optional[float] = None
    kl: Optional[float] = None
    elapsed_ms: Optional[float] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


class SweepRow(BaseModel):
    setting: SettingName
    d: int
    k: int
    n: int
    m: str
    sigma: float
    eta_summary: str
    weights: str
    delta: float
    trials: int
    median_sin: Optional[float] = None
    q25: Optional[float] = None
    q75: Optional[float] = None
    upper_weighted: Optional[float] = None
    lower: Optional[float] = None
    failed: int = 0
    elapsed_ms_total: Optional[float] = None


class SlopeFit(BaseModel):
    slope: float
    intercept: float
    r_squared: float


class EstimateReport(BaseModel):
    setting: SettingName
    d: int
    k: int
    n_users: int
    eigenvalues: List[float]
    gap: float
    degenerate_gap: bool
    weights: Dict[str, float]
    dropped_users: List[str] = Field(default_factory=list)
    assumption2: Optional[Assumption2Check] = None


class AnglesReport(BaseModel):
    angles: List[float]
    max_sin: Optional[float] = None
