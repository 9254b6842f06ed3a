"""Exception hierarchy shared by the library and the command line."""


class HSSError(Exception):
    """Base class; ``category`` is what the CLI prints and maps to an exit code."""

    category = "error"
    exit_code = 1


class DimensionError(HSSError, ValueError):
    category = "dimension"


class ContractError(HSSError, RuntimeError):
    category = "contract"


class NumericError(HSSError, ArithmeticError):
    category = "numeric"


class ConfigError(HSSError, ValueError):
    category = "config"
    exit_code = 2


class DataIOError(HSSError, OSError):
    category = "io"
    exit_code = 3


class CompatibilityError(HSSError, ValueError):
    category = "compatibility"
    exit_code = 4


class UnknownIdError(HSSError, KeyError):
    category = "lookup"
    exit_code = 5

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown id"
