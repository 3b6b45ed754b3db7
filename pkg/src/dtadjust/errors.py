"""Exception and warning classes.

Every error carries the CLI exit code it maps to: 2 for configuration
problems, 3 for bad data, 4 for numerical failures.
"""

from __future__ import annotations


class DTAError(Exception):
    exit_code = 3


class ConfigError(DTAError):
    exit_code = 2


class DataError(DTAError):
    exit_code = 3


class NumericalError(DTAError):
    exit_code = 4


class NonFinite(DataError):
    def __init__(self, row: int, col: str):
        self.row, self.col = row, col
        super().__init__(f"non-finite value at row {row}, column {col!r}")


class EmptyArm(DataError):
    def __init__(self, arm: int):
        self.arm = arm
        super().__init__(f"arm {arm} has no observations")


class LabelOutOfRange(DataError):
    def __init__(self, row: int, label, n_arms: int):
        self.row = row
        super().__init__(f"row {row}: arm label {label!r} outside 0..{n_arms - 1}")


class UnknownColumn(ConfigError):
    pass


class EmptySpec(ConfigError):
    pass


class SpecMismatch(DataError):
    pass


class GridMismatch(DataError):
    pass


class NonpositiveH(ConfigError):
    pass


class UNotInOpenInterval(ConfigError):
    pass


class TooFewReplicates(ConfigError):
    pass


class ParseError(DataError):
    def __init__(self, row: int, col: str, value: str):
        self.row, self.col = row, col
        super().__init__(f"cannot parse {value!r} as a number at row {row}, column {col!r}")


class MissingColumn(ConfigError):
    pass


class EmptyFile(DataError):
    pass


class DTAWarning(UserWarning):
    pass


class DegenerateColumnWarning(DTAWarning):
    pass


class SingletonSupportWarning(DTAWarning):
    pass


class BalanceWarning(DTAWarning):
    pass


class ContinuousOutcomeAdvisory(DTAWarning):
    pass


class ExperimentalWarning(DTAWarning):
    pass
