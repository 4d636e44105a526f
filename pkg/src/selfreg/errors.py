"""Exception types shared across the package.

All errors raised deliberately by this package derive from
:class:`SelfRegError`, so callers can catch one base class.  Input
problems (bad shapes, invalid parameter values, malformed files) are
:class:`ValidationError`; numerical failures during estimation are
:class:`EstimationError`.
"""

from __future__ import annotations


class SelfRegError(Exception):
    """Base class for every error deliberately raised by this package."""


class ValidationError(SelfRegError, ValueError):
    """Invalid user input: parameter values, array shapes, config keys."""


class DataFormatError(ValidationError):
    """A data file could not be parsed.

    Carries the offending line number when known, so command line users
    can locate the problem in large panel files.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EstimationError(SelfRegError, RuntimeError):
    """An estimation step failed for numerical reasons.

    Examples: a design matrix without full column rank, a response with
    zero variance, or every candidate in a smoothing search failing.
    """


class ConvergenceError(EstimationError):
    """An iterative fit stopped without meeting its convergence rule.

    Attributes
    ----------
    deviance : float or None
        Best objective value reached before giving up.
    n_iter : int or None
        Iterations spent.
    """

    def __init__(self, message: str, deviance: float | None = None,
                 n_iter: int | None = None):
        super().__init__(message)
        self.deviance = deviance
        self.n_iter = n_iter
