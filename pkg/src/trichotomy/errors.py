"""Exception hierarchy shared by all modules.

Two families exist so the command line can map them to exit codes:
:class:`ValidationError` for bad input or parameters and
:class:`NumericalFailure` for computations that cannot be trusted.
"""


class ValidationError(ValueError):
    """Input or parameter violates a precondition."""


class DimensionError(ValidationError):
    pass


class ParameterError(ValidationError):
    pass


class BudgetError(ValidationError):
    """Perturbation norm is outside the admissible window."""


class SummabilityError(ValidationError):
    """A tail series would diverge for the given rates."""


class NumericalFailure(ArithmeticError):
    """A numerical step failed or produced an untrustworthy result."""


class AmbiguousSplittingError(NumericalFailure):
    """An eigenvalue modulus sits too close to a splitting threshold."""


class NotInvariantError(NumericalFailure):
    pass


class NotInvertibleError(NumericalFailure):
    pass


class RateInfeasibleError(NumericalFailure):
    """Requested exponential rates are not attained by the operator."""


class StructureError(NumericalFailure):
    """Computed projectors fail idempotency, orthogonality or resolution."""


class ConsistencyError(NumericalFailure):
    """Two independent evaluations of the same quantity disagree."""
