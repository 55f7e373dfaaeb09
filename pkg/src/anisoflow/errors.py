"""Exception types shared across the package."""


class AnisoflowError(Exception):
    """Base class for all package errors."""


class DomainError(AnisoflowError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigurationError(AnisoflowError, ValueError):
    """A task, boundary set or system is inconsistent.

    ``problems`` lists every violation found, not only the first.
    """

    def __init__(self, message, problems=None):
        self.problems = list(problems) if problems else [message]
        super().__init__(message if problems is None else message + ": " + "; ".join(self.problems))


class SolverError(AnisoflowError, RuntimeError):
    """The linear solve failed or produced an unusable result."""
