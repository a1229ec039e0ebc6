"""Exception hierarchy."""


class MDFAError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(MDFAError, ValueError):
    pass


class DimensionError(MDFAError, ValueError):
    pass


class TooFewRows(DimensionError):
    pass


class NotPsd(MDFAError, ValueError):
    pass


class NotIdentified(MDFAError, ValueError):
    """Loading matrix violates the lower-trapezoid identification pattern."""


class NotIdentifiable(MDFAError, ValueError):
    """Loading matrix violates the Anderson-Rubin row-deletion condition."""


class RankDeficient(MDFAError, ArithmeticError):
    pass


class SingularHessian(MDFAError, ArithmeticError):
    pass


class EvalError(MDFAError, ArithmeticError):
    """A finite-difference evaluation returned a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class InvalidSpec(MDFAError, ValueError):
    pass
