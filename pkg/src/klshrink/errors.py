"""Exception hierarchy shared by every module."""


class KLShrinkError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(KLShrinkError, ValueError):
    """A parameter is outside its admissible range."""


class DomainError(KLShrinkError, ValueError):
    """A prior is not defined (or has no finite marginal) in this dimension."""


class InputError(KLShrinkError, ValueError):
    """Caller-supplied auxiliary data is inconsistent."""


class NumericalError(KLShrinkError, ArithmeticError):
    """A numerical routine could not reach its requested accuracy.

    ``achieved`` carries the error bound that was reached.
    """

    def __init__(self, message, achieved=float("nan")):
        super().__init__(message)
        self.achieved = achieved
