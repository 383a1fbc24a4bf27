"""Exception types shared across the package.

Errors that correspond to leaving the validity domain of the gait machinery
(rather than bad configuration) derive from DomainError so the CLI can map
them to a distinct exit code.
"""


class HzdError(Exception):
    """Base class for all package errors."""


class ConfigError(HzdError):
    """Invalid configuration file, schema violation or bad constructor input."""


class DimensionError(HzdError):
    """Array dimensions inconsistent with the robot model."""


class DomainError(HzdError):
    """State or parameter outside the validity domain of an operation."""


class SurfaceError(DomainError):
    """State does not satisfy the switching-surface membership predicate."""


class ImpactDegeneracyError(DomainError):
    """Singular contact KKT system in the impact solver."""


class SingularDecouplingError(DomainError):
    """Decoupling matrix numerically singular; virtual constraint invalid here."""


class MonotonicityError(DomainError):
    """Phasing variable loses rank / changes direction."""


class QuadratureError(HzdError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class NonTerminatingStepError(DomainError):
    """No impact event occurred within the allotted horizon."""


class DivergenceError(DomainError):
    """State norm blow-up during integration."""


class ConvergenceError(DomainError):
    """Iterative solver failed to converge."""


class FamilyInvalidityError(DomainError):
    """Constraint family does not keep the periodic orbit fixed."""


class InfeasibleError(DomainError):
    """No feasible gait found within the optimization budget."""
