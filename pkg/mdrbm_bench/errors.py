"""Exception hierarchy shared by the library and the CLI."""

from typing import Optional


class MdrbmBenchError(Exception):
    """Base class for every error raised by mdrbm-bench."""

    exit_code = 1
    # Pipeline stage that failed, set by the experiment runner.
    stage: Optional[str] = None


class UsageError(MdrbmBenchError, ValueError):
    """A function was called with arguments outside its contract."""

    exit_code = 2


class CapabilityError(UsageError):
    """The request is well formed but too large for exact enumeration."""


class ConfigurationError(MdrbmBenchError, ValueError):
    """An experiment or model configuration is invalid."""

    exit_code = 2


class DataFormatError(MdrbmBenchError, ValueError):
    """A dataset file does not match its declared format."""

    exit_code = 3


class NumericError(MdrbmBenchError, ArithmeticError):
    """A computation produced non-finite values or violated a numeric invariant."""

    exit_code = 4
