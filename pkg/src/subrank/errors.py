"""Exception taxonomy shared across the pipeline.

Each class maps to a distinct CLI exit code (see cli.py), so callers can
tell a bad config from bad data from a diverged training run.
"""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Malformed or invariant-violating input data."""


class UndefinedSignalError(DataError):
    """A label signal cannot be computed for a record (e.g. CVR with zero clicks)."""


class SamplingExhaustedError(DataError):
    """Rejection sampling could not produce the requested number of pairs."""


class TrainingDivergedError(Exception):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class UndefinedMetricError(Exception):
    """A metric is undefined on the given inputs (e.g. no positive labels)."""
