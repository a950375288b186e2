"""Exception hierarchy shared by all modules."""


class HerdOptError(Exception):
    """Base class for every error raised by herd_opt."""


class InvalidArgumentError(HerdOptError, ValueError):
    """An argument is outside the operation's domain."""


class RangeViolationError(HerdOptError, ValueError):
    """A transformation would push a probability outside [0, 1]."""


class InfeasibleError(HerdOptError, ValueError):
    """A budget or dose request exceeds what the regions can absorb."""


class InstanceTooLargeError(HerdOptError):
    """The exhaustive oracle refuses instances beyond its enumeration guard."""


class CalibrationOverflowError(HerdOptError, ValueError):
    """Calibrated pairwise infection probabilities would exceed 1."""


class ConsistencyError(HerdOptError, ArithmeticError):
    """Two independent computations of the same quantity disagree."""
