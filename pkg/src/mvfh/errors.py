"""Exception types raised by the model, IO, and numeric layers.

Two families matter to callers: ValidationError for bad inputs (data files,
dimension problems, ill-posed designs) and NumericError for failures inside
otherwise well-posed linear algebra. The CLI maps them to distinct exit codes.
"""


class MvfhError(Exception):
    """Base class for all package errors."""


class ValidationError(MvfhError):
    """Input data or configuration violates a model requirement."""


class DimensionMismatch(ValidationError):
    """Array shapes are inconsistent across areas or with the declared k/s."""


class NonPositiveDefiniteD(ValidationError):
    """A sampling covariance matrix is not symmetric positive definite."""

    def __init__(self, area_id: str, detail: str = ""):
        self.area_id = area_id
        msg = f"sampling covariance for area {area_id!r} is not positive definite"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class RankDeficientX(ValidationError):
    """The stacked covariate matrix does not have full column rank."""


class ParseError(ValidationError):
    """A CSV input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingArea(ValidationError):
    """An area present in one input file has no counterpart in the other."""

    def __init__(self, area_id: str, detail: str = ""):
        self.area_id = area_id
        msg = f"no matching record for area {area_id!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(MvfhError):
    """A numeric computation failed on structurally valid input."""


class SingularInformation(NumericError):
    """The GLS information matrix could not be inverted."""


class EigenFailure(NumericError):
    """An eigendecomposition failed to converge or produced invalid output."""
