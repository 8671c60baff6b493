"""Exception types shared across the package."""


class TdForgeError(Exception):
    """Base class for package errors."""


class InvalidInputError(TdForgeError, ValueError):
    """Input violates a documented precondition or invariant."""


class RankDeficientError(InvalidInputError):
    """Feature matrix lacks full column rank."""

    def __init__(self, message, sigma_min):
        super().__init__(message)
        self.sigma_min = sigma_min


class NumericalFailure(TdForgeError, ArithmeticError):
    """A linear solve or eigenproblem is too ill-conditioned to trust."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual/condition {residual:.3g})")
        self.residual = residual
