from pathlib import Path
from typing import Dict, Iterable, List, Sequence, TypeVar, Union

from numpy.random import Generator, Philox

from subspace_recovery.errors import ConfigFileError

MASK64 = (1 << 64) - 1
SPLITMIX_INCREMENT = 0x9E3779B97F4A7C15
SPLITMIX_MUL1 = 0xBF58476D1CE4E5B9
SPLITMIX_MUL2 = 0x94D049BB133111EB

# Stream tags keep the per-user generators of different roles disjoint
TAG_BASIS = 1
TAG_MEANS = 2
TAG_NOISE = 3
TAG_MEASUREMENT = 4

T = TypeVar("T")


def splitmix64(value: int) -> int:
    """
    One SplitMix64 step: advances the state by the golden-ratio increment and mixes it.

    Args:
        value (int): 64-bit unsigned state.

    Returns:
        int: The mixed 64-bit output.
    """
    z = (value + SPLITMIX_INCREMENT) & MASK64
    z = ((z ^ (z >> 30)) * SPLITMIX_MUL1) & MASK64
    z = ((z ^ (z >> 27)) * SPLITMIX_MUL2) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *indices: int) -> int:
    """Fold a sequence of indices into a master seed, one SplitMix64 round per index."""
    state = splitmix64(master & MASK64)
    for index in indices:
        state = splitmix64(state ^ (index & MASK64))
    return state


class RandomStreams:
    """
    Counter-based random streams for one trial.

    Every (tag, user) pair gets its own Philox generator keyed by a derived seed, so generation
    is independent of the order in which users or trials are processed.
    """

    def __init__(self, seed: int, trial: int = 0) -> None:
        self.seed = seed
        self.trial = trial

    def stream(self, tag: int, index: int = 0) -> Generator:
        return Generator(Philox(key=derive_seed(self.seed, self.trial, tag, index)))

    def basis(self) -> Generator:
        return self.stream(TAG_BASIS)

    def means(self, user: int) -> Generator:
        return self.stream(TAG_MEANS, user)

    def noise(self, user: int) -> Generator:
        return self.stream(TAG_NOISE, user)

    def measurement(self, user: int) -> Generator:
        return self.stream(TAG_MEASUREMENT, user)


def trial_seed(master: int, trial: int) -> int:
    return derive_seed(master, trial)


def format_float(value: float) -> str:
    # 17 significant digits round-trip every double; '%' formatting ignores locale
    return "%.17g" % value


def expand_pattern(pattern: Sequence[T], n: int) -> List[T]:
    """Cycle a pattern over n users: pattern [2, 6] with n=5 gives [2, 6, 2, 6, 2]."""
    if not pattern:
        raise ValueError("Pattern must be nonempty")
    return [pattern[index % len(pattern)] for index in range(n)]


def parse_config_file(path: Union[str, Path], allowed_keys: Iterable[str]) -> Dict[str, str]:
    """
    Parses a `key = value` configuration file.

    Blank lines and lines starting with '#' are skipped; trailing '# ...' comments are stripped.

    Args:
        path (str or Path): Location of the configuration file.
        allowed_keys (iterable of str): Keys accepted in the file.

    Returns:
        dict: Raw string values keyed by option name, in file order.

    Raises:
        ConfigFileError: On malformed lines, unknown or repeated keys, naming the line number.
    """
    allowed = set(allowed_keys)
    values: Dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigFileError(f"Cannot read config file {path}: {e}")

    for line_number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"expected 'key = value', got '{raw.strip()}'", line=line_number)
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if not key or not value:
            raise ConfigFileError(f"expected 'key = value', got '{raw.strip()}'", line=line_number)
        if key not in allowed:
            raise ConfigFileError(f"unknown key '{key}'", line=line_number)
        if key in values:
            raise ConfigFileError(f"key '{key}' given more than once", line=line_number)
        values[key] = value
    return values

