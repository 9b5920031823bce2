"""Exception types shared across the library.

The CLI maps these onto process exit codes: usage problems exit 1,
data/config problems exit 2, numeric failures exit 3.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class DataError(ValueError):
    """Bad input data: unknown tokens, malformed config, vocab mismatch."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""
