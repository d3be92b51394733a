"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: malformed input files
exit 2, invalid parameter values exit 3, degenerate data exits 4.
"""


class IlocaError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(IlocaError, ValueError):
    """A configuration value or function argument is out of its allowed range."""


class MalformedInputError(IlocaError, ValueError):
    """An input file could not be parsed into the expected shape."""


class DegenerateDataError(IlocaError, ValueError):
    """The data cannot support the requested computation (e.g. a zero marginal
    total or a dataset without any respondents)."""


class SingularDesignError(IlocaError, ValueError):
    """A least-squares design matrix is rank deficient."""
