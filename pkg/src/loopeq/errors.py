"""Exception hierarchy shared across the package."""


class LoopeqError(Exception):
    """Base class for all package-specific failures."""


class InvalidInputError(LoopeqError):
    """Arguments violate a documented precondition."""


class QuadratureError(LoopeqError):
    """Non-finite integrand value or a quadrature tolerance failure."""


class RefinementNeededError(LoopeqError):
    """Samples too coarse to track a continuous branch; refine and retry."""


class KernelError(LoopeqError):
    """Kernel is degenerate on the given configuration."""


class ImpossiblePrefixError(KernelError):
    """A conditioning prefix carries zero probability mass."""


class GeometryError(LoopeqError):
    """Contour or grid geometry is inconsistent (e.g. circle hits a pole)."""


class DomainError(LoopeqError):
    """Evaluation point outside the admissible domain."""


class PoleEvaluationError(DomainError):
    """Direct evaluation requested at a pole."""


class PositivityError(LoopeqError):
    """Parameter choice breaks positivity of the probability weights."""


class ConsistencyError(LoopeqError):
    """An internal invariant failed; indicates a bug, not bad input."""


class EnumerationBudgetError(LoopeqError):
    """Brute-force enumeration would exceed the configured budget."""


class ConvergenceError(LoopeqError):
    """Iterative solver failed to converge within its step budget."""
