"""Exception hierarchy shared by every module of the package."""


class BMCError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(BMCError, ValueError):
    pass


class NonStochastic(BMCError, ValueError):
    pass


class NegativeEntry(BMCError, ValueError):
    pass


class ReducibleChain(BMCError, ValueError):
    """More than one eigenvalue of modulus one (reducible or periodic chain)."""


class NonDiagonalizable(BMCError, ValueError):
    pass


class WrongRegime(BMCError, ValueError):
    pass


class NonConvergent(BMCError, RuntimeError):
    pass


class ImagResidueExceeded(BMCError, RuntimeError):
    pass


class NotConditionallyCentered(BMCError, ValueError):
    pass


class SubsetOutOfRange(BMCError, IndexError):
    pass


class SupportExceedsDepth(BMCError, ValueError):
    pass


class BudgetExceeded(BMCError, RuntimeError):
    pass


class TooFewReplicates(BMCError, ValueError):
    pass


class LengthMismatch(BMCError, ValueError):
    pass


class ConfigParse(BMCError, ValueError):
    pass
