"""Exception types shared across the package."""


class GmrfError(Exception):
    """Base class for all gmrfmix errors."""


class NotSpd(GmrfError):
    """Matrix is not symmetric positive-definite (Cholesky hit a non-positive pivot)."""


class DimensionMismatch(GmrfError):
    """Operands have incompatible dimensions."""


class SingularCovariance(GmrfError):
    """Empirical covariance is not SPD even after the ridge floor."""


class LineSearchFailed(GmrfError):
    """No acceptable step size found within the backtracking budget."""


class EmptyComponent(GmrfError):
    """A mixture component's responsibility mass fell below the floor."""


class DegenerateInit(GmrfError):
    """EM initialization produced an empty component."""


class LengthMismatch(GmrfError):
    """Label vectors have different lengths."""


class EmptyInput(GmrfError):
    """An operation received zero-length input."""
