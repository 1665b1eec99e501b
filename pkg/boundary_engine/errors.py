"""Exception types shared by the library and the CLI."""


class InvalidArgumentError(ValueError):
    """An operation was called outside its domain (bad shape, tau <= 0, eps outside (0, 1/2), ...)."""


class NumericalFailureError(ArithmeticError):
    """A numerical routine did not produce a trustworthy value (quadrature, non-finite output)."""


class InvariantFailureError(AssertionError):
    """One or more verification checks failed."""
