"""Exception hierarchy shared across the package.

DataError covers malformed or inconsistent inputs (CLI exit code 2);
NumericalError covers solver breakdowns (exit code 3).
"""


class CenrankError(Exception):
    pass


class DataError(CenrankError):
    pass


class UnknownVariableError(DataError):
    pass


class DuplicateRecordError(DataError):
    pass


class MissingOutcomeError(DataError):
    pass


class InvalidOnsetError(DataError):
    pass


class UnimputedSampleError(DataError):
    pass


class EmptyColumnError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NumericalError(CenrankError):
    pass
