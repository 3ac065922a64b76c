"""Exception types raised across the package."""


class RangeError(ValueError):
    """Model parameters outside ``n >= 3``, ``r >= 1``, ``2r < n``."""


class DomainError(ValueError):
    """Argument outside the domain where a quantity is defined."""


class BranchError(DomainError):
    """Logarithm requested on the closed negative real axis."""


class OrderError(ValueError):
    """Unsupported derivative order."""


class ConvergenceError(RuntimeError):
    """A quadrature or root-finding routine did not reach its tolerance."""


class UnknownRegime(ValueError):
    """Regime tag not in {long, threshold, finite, intermediate}."""


class EmptyInput(ValueError):
    """An estimator received no samples."""
