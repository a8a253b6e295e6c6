from typing import Optional


class SubspaceRecoveryError(Exception):
    code: str = "subspace_recovery_error"

    def __init__(self, message: str = "Subspace recovery failed.") -> None:
        self.message = message
        super().__init__(self.message)


class DimensionError(SubspaceRecoveryError, ValueError):
    code = "dimension_error"

    def __init__(self, message: str = "Matrix or basis dimensions are incompatible.") -> None:
        super().__init__(message)


class InputError(SubspaceRecoveryError, ValueError):
    code = "input_error"

    def __init__(self, message: str = "Input contains non-finite or otherwise invalid values.") -> None:
        super().__init__(message)


class InsufficientSamplesError(SubspaceRecoveryError, ValueError):
    code = "insufficient_samples"

    def __init__(self, user: str, samples: int, required: int = 2) -> None:
        self.user = user
        self.samples = samples
        super().__init__(f"User {user} has {samples} sample(s); at least {required} are required.")


class DegenerateGapError(SubspaceRecoveryError, ArithmeticError):
    code = "degenerate_gap"

    def __init__(self, gap: float) -> None:
        self.gap = gap
        super().__init__(f"Spectral gap {gap:.3e} is not positive; the perturbation bound does not apply.")


class RankDeficientError(SubspaceRecoveryError, ArithmeticError):
    code = "rank_deficient"

    def __init__(self, message: str = "The k-th signal eigenvalue is zero.") -> None:
        super().__init__(message)


class SingularCovarianceError(SubspaceRecoveryError, ArithmeticError):
    code = "singular_covariance"

    def __init__(self, message: str = "Noise scale must be positive for the covariance to be invertible.") -> None:
        super().__init__(message)


class ConfigFileError(SubspaceRecoveryError, ValueError):
    code = "config_error"

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DataFileError(SubspaceRecoveryError, ValueError):
    code = "data_error"

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
