"""Exception hierarchy shared by every solver module."""


class IeppaError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(IeppaError, ValueError):
    pass


class DomainError(IeppaError, ValueError):
    """An argument lies outside the domain of the function being evaluated."""


class NonBinaryError(IeppaError, ValueError):
    pass


class OverlapError(IeppaError, ValueError):
    """Two rows of one constraint block share a tensor entry."""


class EmptyRowError(IeppaError, ValueError):
    pass


class InvalidDirectionError(IeppaError, ValueError):
    pass


class ZeroRhsError(IeppaError, ValueError):
    """A right-hand side entry is not strictly positive.

    The multiplicative and log-domain updates take ``log b``; for tomography
    data drop empty projection lines first (see :func:`ieppa.tomo.project_image`,
    which pins their pixels to zero).
    """


class NotMarginalError(IeppaError, ValueError):
    """The instance blocks are not the CMOT marginal blocks."""


class UnderflowError(IeppaError, ArithmeticError):
    """The multiplicative sweep lost range; switch to the log-domain sweep."""


class InnerCapExceeded(IeppaError, RuntimeError):
    pass


class InfeasibleDataError(IeppaError, ValueError):
    pass


class SizeGuardError(IeppaError, ValueError):
    pass


class InstanceFormatError(IeppaError, ValueError):
    pass
