"""Exception hierarchy shared by all modules."""


class SpecbalError(Exception):
    """Base class for every error raised by this package."""


class InputError(SpecbalError, ValueError):
    """Malformed, non-finite, asymmetric or non positive-definite input."""


class ConfigError(SpecbalError, ValueError):
    """A parameter lies outside its admissible range."""


class DegenerateError(SpecbalError, ArithmeticError):
    """A matrix that must be full rank (or positive definite) is not."""


class InfeasibleError(SpecbalError):
    """The requested balancing problem violates d > k or l <= floor((d-1)/(k-1))."""


class AlreadyBalanced(SpecbalError):
    """Raised when a top eigenspace has dimension >= k, i.e. the ratio is already < 1/k."""


class InternalError(SpecbalError, RuntimeError):
    """A mathematically guaranteed outcome did not happen; carries a diagnostic dump."""
