"""Exception hierarchy.

``InputError`` subclasses signal bad or inconsistent input (CLI exit code 2),
``NumericalError`` subclasses signal a numerical breakdown (exit code 3).
"""


class EgofuseError(Exception):
    pass


class InputError(EgofuseError, ValueError):
    pass


class NumericalError(EgofuseError, ArithmeticError):
    pass


class NonMonotoneTime(InputError):
    pass


class GapTooLarge(InputError):
    pass


class StaleMeasurement(InputError):
    pass


class TooFew(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class OutOfUnambiguousRange(InputError):
    pass


class IndexOutOfBounds(InputError, IndexError):
    pass


class UnknownProfile(InputError):
    pass


class TimestampMismatch(InputError):
    pass


class EmptyOverlap(InputError):
    pass


class NotSPD(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class NoConsensus(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass
