"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so raise the most specific
one that applies.
"""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class NumericalError(ArithmeticError):
    """Non-finite loss or gradient encountered during training."""


class MissingInputError(FileNotFoundError):
    """A required input file or checkpoint does not exist."""
