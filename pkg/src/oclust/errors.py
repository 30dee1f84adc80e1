"""Exception types shared across the package."""

from __future__ import annotations


class OclustError(Exception):
    """Base class for all errors raised by this package."""


class SingularCovarianceError(OclustError):
    """A covariance matrix is not positive definite (even after regularization)."""


class InsufficientPointsError(OclustError):
    """A cluster holds too few points for the requested statistic.

    Attributes:
        cluster: index of the offending cluster, when known.
    """

    def __init__(self, message: str, cluster: int | None = None):
        super().__init__(message)
        self.cluster = cluster


class DegenerateFitError(OclustError):
    """Model fitting collapsed (empty cluster, runaway component, ...).

    Attributes:
        run_index: index of the offending EM restart, when known.
        subset_index: row whose leave-one-out refit degenerated, when known.
        partial_trace: iteration records accumulated before a trimming run
            aborted, when the failure happened mid-run.
    """

    def __init__(
        self,
        message: str,
        run_index: int | None = None,
        subset_index: int | None = None,
        partial_trace: list | None = None,
    ):
        super().__init__(message)
        self.run_index = run_index
        self.subset_index = subset_index
        self.partial_trace = partial_trace


class BinningError(OclustError):
    """Histogram bins could not be built or are incompatible with the data."""


class GenerationStallError(OclustError):
    """Rejection sampling made essentially no progress within its budget."""


class InputFormatError(OclustError):
    """An input file could not be parsed.

    Attributes:
        line: 1-based line number of the offending record, when known.
        column: column name or 1-based position, when known.
    """

    def __init__(self, message: str, line: int | None = None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column
