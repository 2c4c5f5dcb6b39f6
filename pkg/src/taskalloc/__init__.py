"""Population-game task allocation with decreasing revision rates."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError, DisturbanceError, DomainError, GraphError, InfeasibleError, NoRootError,
    StepSizeError, TaskAllocError, UnsupportedRuleError,
)
from .game_core import Equilibrium, TaskDynamics, reference_dynamics, solve_equilibrium  # noqa: E402
from .protocols import LearningRule, RuleKind, smith  # noqa: E402

__all__ = [
    "__version__", "ConfigError", "DisturbanceError", "DomainError", "GraphError", "InfeasibleError",
    "NoRootError", "StepSizeError", "TaskAllocError", "UnsupportedRuleError", "Equilibrium",
    "TaskDynamics", "reference_dynamics", "solve_equilibrium", "LearningRule", "RuleKind", "smith",
]
