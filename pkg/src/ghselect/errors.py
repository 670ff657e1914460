"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DataError(ValueError):
    """Input data failed validation."""


class FitError(RuntimeError):
    """A model could not be fitted."""
