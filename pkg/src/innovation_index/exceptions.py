"""Exception types shared across the pipeline.

The CLI maps each family onto a process exit code, so library code should
raise the most specific of these rather than a bare ValueError.
"""


class InnovationIndexError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(InnovationIndexError):
    """Invalid run configuration (exit code 1)."""


class DataError(InnovationIndexError, ValueError):
    """Malformed or inconsistent input data (exit code 2)."""


class TrainingError(InnovationIndexError):
    """Model fitting or model-file failure (exit code 3)."""
