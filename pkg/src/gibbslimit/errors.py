"""Exception hierarchy shared by all modules.

Every error carries its class name into CLI manifests, so names are part of
the public surface.
"""


class GibbsLimitError(Exception):
    """Base class for all package errors."""


class IOFailure(GibbsLimitError):
    pass


class NonIntegrable(GibbsLimitError):
    pass


class OutOfSupport(GibbsLimitError):
    pass


class ZeroDensity(GibbsLimitError):
    pass


class SupportMismatch(GibbsLimitError):
    pass


class ZeroMarginal(GibbsLimitError):
    pass


class ZeroEvent(GibbsLimitError):
    pass


class EmptyShell(GibbsLimitError):
    pass


class BoundaryEvaluation(GibbsLimitError):
    pass


class DegenerateFit(GibbsLimitError):
    pass


class NoSolution(GibbsLimitError):
    pass


class ZeroMass(GibbsLimitError):
    pass


class ExtinctionBeforeStationarity(GibbsLimitError):
    pass


class RejectionStall(GibbsLimitError):
    pass


class InvalidShell(GibbsLimitError):
    pass


class EmptySampleSet(GibbsLimitError):
    pass


class MonteCarloBudgetExceeded(GibbsLimitError):
    pass


class NoStationaryPoint(GibbsLimitError):
    pass


class UndefinedAtZero(GibbsLimitError):
    pass


class InsufficientAcceptedSnapshots(GibbsLimitError):
    pass


class BinningMismatch(GibbsLimitError):
    pass


class ConfigError(GibbsLimitError):
    pass
