"""Exception hierarchy shared across the pipeline.

The CLI maps these onto process exit codes: ConfigError -> 2, DataError
(and subclasses) -> 3, ConvergenceError -> 4.
"""


class MammopatchError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MammopatchError):
    """Invalid configuration value or unusable flag combination."""


class DataError(MammopatchError):
    """Unreadable, malformed, or missing input data."""


class ShapeError(DataError):
    """Array dimensions violate an operation's contract."""


class BoundsError(DataError):
    """A rectangle or index lies outside its container."""


class DomainError(DataError):
    """Mathematically invalid input (single-class labels, empty counts, ...)."""


class InfeasibleNuError(DomainError):
    """nu exceeds 2 * min(n_pos, n_neg) / n; the nu-SVM dual has no feasible point."""


class WeightFormatError(DataError):
    """Weight file failed to parse; the message names the offending tensor."""


class SelectionError(DataError):
    """Feature selection cannot rank anything (all importances zero)."""


class ConvergenceError(MammopatchError):
    """Solver ran out of its iteration budget.

    Carries the best iterate (``alpha``) and the remaining KKT ``residual``.
    """

    def __init__(self, message, alpha=None, residual=None):
        super().__init__(message)
        self.alpha = alpha
        self.residual = residual


class GridSearchError(MammopatchError):
    """Every grid cell failed; no parameter can be selected."""


class EvaluationError(MammopatchError):
    """Final evaluation aborted; carries the partial report built so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
