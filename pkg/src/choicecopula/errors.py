"""Exception and warning types shared across the package."""


class ChoiceCopulaError(Exception):
    """Base class for all package errors."""


class DomainError(ChoiceCopulaError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ShapeError(ChoiceCopulaError, ValueError):
    """Array dimensions do not conform."""


class DecompositionError(ChoiceCopulaError, ValueError):
    """Cholesky factorization failed; ``pivot`` is the zero-based failing index."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SingularDesignError(ChoiceCopulaError):
    """OLS design matrix is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DegeneratePredictionError(ChoiceCopulaError):
    """Predicted working hours are not strictly positive."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


class DegenerateChoiceError(ChoiceCopulaError):
    """Some alternative is never chosen, so its coefficients are not identified."""


class SpecificationError(ChoiceCopulaError):
    """Model specification is not identified (e.g. missing exclusion restrictions)."""


class ConditioningError(ChoiceCopulaError):
    """Accept-reject simulation produced no draws in the conditioning event."""

    def __init__(self, message, acceptance_rate=0.0):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


class InternalConsistencyError(ChoiceCopulaError):
    """A probability identity was violated beyond numerical tolerance."""


class DataError(ChoiceCopulaError):
    """Base class for dataset ingestion errors."""


class SchemaError(DataError):
    """The schema references columns that are missing or malformed."""


class DataParseError(DataError):
    """A cell could not be parsed; ``line`` is the 1-based file line."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class DataRangeError(DataError):
    """A value lies outside its admissible range; ``line`` is the 1-based file line."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class ConfigError(ChoiceCopulaError):
    """Invalid run configuration."""


class SeparationWarning(UserWarning):
    """An alternative is perfectly predicted by a binary covariate."""


class ReliabilityWarning(UserWarning):
    """Too many bootstrap replicates failed for the standard errors to be trusted."""
