"""Exception hierarchy.

CLI exit codes: ``UsageError`` 2, ``DataError`` (bad input data) 3,
``ComputeError`` (numerical failures) 4.
"""


class AeForceError(Exception):
    exit_code = 1


class DataError(AeForceError):
    exit_code = 3


class ComputeError(AeForceError):
    exit_code = 4


class AllZeroTrace(DataError):
    pass


class SpanTooShort(DataError):
    pass


class WindowOutOfRange(DataError):
    pass


class EmptySignal(DataError):
    pass


class EmptyInput(DataError):
    pass


class FrequencyOutOfBand(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class ArityMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NoEvents(DataError):
    pass


class InsufficientExperiments(DataError):
    pass


class ConfigInvalid(DataError):
    pass


class TooFewRows(ComputeError):
    pass


class DegenerateTarget(ComputeError):
    pass


class DegenerateInput(ComputeError):
    pass


class CombinatorialLimit(ComputeError):
    pass


class UsageError(AeForceError):
    exit_code = 2
