"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/usage errors exit 2,
IO/integrity errors exit 3, numeric failures exit 4.
"""


class LlastError(Exception):
    exit_code = 1


class ConfigError(LlastError, ValueError):
    exit_code = 2


class RegistryError(ConfigError):
    """Unknown language code."""


class ShapeError(LlastError, ValueError):
    exit_code = 2


class LengthError(LlastError, ValueError):
    exit_code = 2


class DegenerateBatchError(LlastError, ValueError):
    exit_code = 2


class StaleTapeError(LlastError, RuntimeError):
    exit_code = 4


class StateError(LlastError, RuntimeError):
    exit_code = 2


class ParseError(LlastError, ValueError):
    exit_code = 2


class IntegrityError(LlastError, IOError):
    exit_code = 3


class OutputExistsError(LlastError, FileExistsError):
    exit_code = 3


class NumericError(LlastError, ArithmeticError):
    exit_code = 4
