# services/errors.py - exception taxonomy shared by the library and the CLI
from typing import Sequence


class PermFwerError(Exception):
    """Base error. `category` doubles as the CLI's structured error name."""

    category = "Error"
    exit_code = 1


class DegenerateLabels(PermFwerError, ValueError):
    category = "DegenerateLabels"
    exit_code = 10


class RankTooHigh(PermFwerError, ValueError):
    category = "RankTooHigh"
    exit_code = 11


class InsufficientSamples(PermFwerError, ValueError):
    category = "InsufficientSamples"
    exit_code = 12


class SingularSystem(PermFwerError, ArithmeticError):
    category = "SingularSystem"
    exit_code = 13


class InsufficientTrials(PermFwerError, ValueError):
    category = "InsufficientTrials"
    exit_code = 14


class ParseError(PermFwerError, ValueError):
    category = "ParseError"
    exit_code = 20


class DimensionMismatch(PermFwerError, ValueError):
    category = "DimensionMismatch"
    exit_code = 21


class NonFiniteValue(PermFwerError, ValueError):
    category = "NonFiniteValue"
    exit_code = 22


class ConfigError(PermFwerError, ValueError):
    category = "ConfigError"
    exit_code = 2


class ZeroVarianceWarning(UserWarning):
    """Pooled variance was exactly zero; the statistic there is set to 0."""

    def __init__(self, features: Sequence[int]):
        self.features = [int(i) for i in features]
        preview = ", ".join(str(i) for i in self.features[:10])
        more = "" if len(self.features) <= 10 else f" (+{len(self.features) - 10} more)"
        super().__init__(f"zero pooled variance at feature(s) {preview}{more}; statistic set to 0")


class SchemaError(PermFwerError, ValueError):
    category = "SchemaError"
    exit_code = 30
