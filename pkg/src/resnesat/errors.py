"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError (and
subclasses) -> 2, DivergenceError -> 3.
"""


class ShapeError(ValueError):
    """Tensor dimensions violate an operation's contract."""


class ConfigError(ValueError):
    """Invalid run configuration (bad flag value, unknown config key, ...)."""


class DataError(ValueError):
    """Malformed input data: manifest rows, image files, fold files."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt, truncated, or inconsistent with its config."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""
