"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, data-shaped errors
(ParseError, DataError, SnapshotError, EvalError) -> 2, TrainingError -> 3.
"""


class NasrecError(Exception):
    """Base class for all package errors."""


class ConfigError(NasrecError):
    """Invalid configuration, flags, or usage."""


class ParseError(NasrecError):
    """Malformed input file; message carries file and line number."""


class DataError(NasrecError):
    """Structurally invalid data (duplicates, unknown ids, shape clashes)."""


class SnapshotError(NasrecError):
    """Unreadable, corrupt, or mismatched model snapshot."""


class EvalError(NasrecError):
    """Evaluation cannot produce metrics (e.g. no evaluable users)."""


class TrainingError(NasrecError):
    """Numerical failure during optimization."""
