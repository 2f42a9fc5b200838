"""Exception hierarchy shared across the package.

``ContractError`` and subclasses signal bad inputs or configuration (CLI exit
code 1); I/O problems surface as ``OSError`` (exit code 2).
"""


class ContractError(ValueError):
    """A precondition or contract was violated."""


class ParameterError(ContractError):
    pass


class DegenerateInputError(ContractError):
    pass


class FormatError(ContractError):
    """A file exists but is not in a supported format."""


class ConfigError(ContractError):
    pass
