"""Exception types raised across the package."""


class TaskAllocError(Exception):
    """Base class for all package errors."""


class DomainError(TaskAllocError, ValueError):
    """An argument lies outside the domain of a function."""


class NoRootError(TaskAllocError):
    """Bracket expansion for a root exceeded its cap."""


class InfeasibleError(TaskAllocError):
    """No equilibrium exists on the admissible interval."""


class StepSizeError(TaskAllocError, ValueError):
    pass


class UnsupportedRuleError(TaskAllocError, TypeError):
    pass


class DisturbanceError(TaskAllocError, ValueError):
    """A disturbance vector violates mass conservation."""


class GraphError(TaskAllocError):
    pass


class ConfigError(TaskAllocError):
    """Configuration could not be parsed or validated.

    ``errors`` holds every problem found, not only the first one.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
